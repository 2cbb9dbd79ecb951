"""Stand-alone width morphing, kernel-size morphing, and subnet morphing
(sequential and stacked).

All operations return a new network whose function matches the parent:
exactly everywhere for width and kernel-size morphs, and on the interior
region (away from an image border determined by kernel growth) for
subnet morphs.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleMorphError, ShapeError
from .morph_depth import DepthMorphRequest, morph_practical, DEFAULT_TOL, DEFAULT_MAX_ITER
from .netdef import ConvLayer, NetworkDef, PActLayer, ParallelLayer, phi_at_zero, same_pad_conv
from .rng import make_rng
from .tensor_ops import as_filter, compose_filters, lstsq_factor_step, pad_filter


@dataclass(frozen=True)
class WidthMorphRequest:
    layer_index: int
    new_width: int
    seed: int = 0


@dataclass(frozen=True)
class SubnetMorphRequest:
    """``path_specs`` is one list of (kernel, channels) pairs per path; the
    last pair of every path must keep the parent layer's output channels."""

    layer_index: int
    path_specs: tuple
    split_weights: tuple
    seed: int = 0
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        object.__setattr__(self, "path_specs", tuple(tuple((int(k), int(c)) for k, c in p) for p in self.path_specs))
        object.__setattr__(self, "split_weights", tuple(float(w) for w in self.split_weights))
        if len(self.path_specs) != len(self.split_weights):
            raise ShapeError("one split weight per path is required")
        if abs(sum(self.split_weights) - 1.0) > 1e-12:
            raise ShapeError(f"split weights must sum to 1, got {sum(self.split_weights)}")


# ---------------------------------------------------------------------------
# width morphing


def _next_conv(layers, start):
    """Index of the next top-level conv after ``start``; the layers in
    between must be activations only."""
    for j in range(start + 1, len(layers)):
        if isinstance(layers[j], ConvLayer):
            return j
        if not isinstance(layers[j], PActLayer):
            raise ShapeError("widening across non-activation layers is not supported")
    raise ShapeError("no downstream conv layer to absorb the widened channels")


def widen(net: NetworkDef, req: WidthMorphRequest) -> NetworkDef:
    """Widen the blob produced by conv layer ``layer_index`` to
    ``new_width`` channels, preserving the network function.

    For each new channel either its incoming filter row or its outgoing
    filter columns are zeroed and the other side is filled with random
    noise; the side with fewer parameters is zeroed, except that the
    outgoing side is always zeroed when the activation in between does
    not map zero to zero (otherwise preservation would break).  Finally
    the widened channels are randomly permuted.
    """
    layers = list(net.layers)
    if not 0 <= req.layer_index < len(layers) or not isinstance(layers[req.layer_index], ConvLayer):
        raise ShapeError(f"layer {req.layer_index} is not a conv layer")
    i = req.layer_index
    j = _next_conv(layers, i)
    lo, hi = layers[i], layers[j]
    c_l = lo.c_out
    if req.new_width < c_l:
        raise ShapeError(f"cannot shrink width {c_l} to {req.new_width}")
    delta = req.new_width - c_l
    rng = make_rng(req.seed)

    act_zero = 0.0
    for l in layers[i + 1 : j]:
        act_zero = (1.0 - l.a) * phi_at_zero(l.base) + l.a * act_zero

    w_lo = np.zeros((req.new_width, lo.c_in, lo.kernel, lo.kernel))
    w_lo[:c_l] = lo.weights
    b_lo = np.zeros(req.new_width)
    b_lo[:c_l] = lo.bias
    w_hi = np.zeros((hi.c_out, req.new_width, hi.kernel, hi.kernel))
    w_hi[:, :c_l] = hi.weights

    if delta > 0:
        in_params = lo.c_in * lo.kernel**2
        out_params = hi.c_out * hi.kernel**2
        zero_side = "outgoing" if act_zero != 0.0 else ("incoming" if in_params <= out_params else "outgoing")

        def noise(shape, like):
            std = float(np.std(like))
            if std == 0.0:
                std = 1.0 / np.sqrt(like[0].size)
            return rng.standard_normal(shape) * std

        if zero_side == "incoming":
            w_hi[:, c_l:] = noise((hi.c_out, delta, hi.kernel, hi.kernel), hi.weights)
        else:
            w_lo[c_l:] = noise((delta, lo.c_in, lo.kernel, lo.kernel), lo.weights)

    perm = rng.permutation(req.new_width)
    layers[i] = same_pad_conv(w_lo[perm], bias=b_lo[perm], fc=lo.fc)
    layers[j] = same_pad_conv(w_hi[:, perm], bias=hi.bias, fc=hi.fc)
    return net.with_layers(layers)


# ---------------------------------------------------------------------------
# kernel-size morphing


def expand_kernel(net: NetworkDef, layer_index: int, new_kernel: int) -> NetworkDef:
    """Grow a conv layer's kernel by centered zero padding, bumping its
    padding to match.  Exact everywhere, including image borders."""
    layers = list(net.layers)
    if not 0 <= layer_index < len(layers) or not isinstance(layers[layer_index], ConvLayer):
        raise ShapeError(f"layer {layer_index} is not a conv layer")
    target = layers[layer_index]
    if new_kernel % 2 == 0:
        raise ShapeError(f"kernel size must be odd, got {new_kernel}")
    w = pad_filter(target.weights, new_kernel)
    layers[layer_index] = same_pad_conv(w, bias=target.bias, fc=target.fc)
    return net.with_layers(layers)


# ---------------------------------------------------------------------------
# sequential subnet morphing


def _compose_chain(factors):
    out = factors[0]
    for f in factors[1:]:
        out = compose_filters(out, f)
    return out


def _middle_system_matrix(left, right, k: int):
    """Matrix for the unknown middle factor X of compose(compose(left, X), right).

    Rows are (c_top, c_bot, s1, s2) row-major over the composed filter,
    columns are vec(X) with X of shape (right.c_in, left.c_out, k, k).
    """
    ci, c0, kl, _ = left.shape
    cp, ci1, kr, _ = right.shape
    kq = kl + kr - 1
    # q[cp, ci1, ci, c0, t1, t2] = sum_{w+v=t} right[cp, ci1, w] * left[ci, c0, v]
    q = np.zeros((cp, ci1, ci, c0, kq, kq))
    for w1 in range(kr):
        for w2 in range(kr):
            q[:, :, :, :, w1 : w1 + kl, w2 : w2 + kl] += np.einsum(
                "pq,rsab->pqrsab", right[:, :, w1, w2], left
            )
    kt = kq + k - 1
    a = np.zeros((cp, c0, kt, kt, ci1, ci, k, k))
    qt = q.transpose(0, 3, 4, 5, 1, 2)  # (cp, c0, kq, kq, ci1, ci)
    for u1 in range(k):
        for u2 in range(k):
            a[:, :, u1 : u1 + kq, u2 : u2 + kq, :, :, u1, u2] = qt
    return a.reshape(cp * c0 * kt * kt, ci1 * ci * k * k)


def _solve_factor(g_tilde, factors, i):
    """Least-squares update of factors[i] with the others fixed."""
    if i == 0:
        upper = _compose_chain(factors[1:])
        solved, res = lstsq_factor_step(g_tilde, upper, "lower")
    elif i == len(factors) - 1:
        lower = _compose_chain(factors[:-1])
        solved, res = lstsq_factor_step(g_tilde, lower, "upper")
    else:
        left = _compose_chain(factors[:i])
        right = _compose_chain(factors[i + 1 :])
        shape = factors[i].shape
        amat = _middle_system_matrix(left, right, shape[2])
        sol, *_ = np.linalg.lstsq(amat, g_tilde.reshape(-1), rcond=None)
        solved = sol.reshape(shape)
        trial = factors[:i] + [solved] + factors[i + 1 :]
        res = float(np.linalg.norm(g_tilde - _compose_chain(trial)))
    return solved, res


def _run_bcd(g, widths, kernels, rng, tol, max_iter):
    c_out, c_in = g.shape[0], g.shape[1]
    chans = [c_in] + list(widths) + [c_out]
    k_tilde = sum(kernels) - (len(kernels) - 1)
    g_tilde = pad_filter(g, k_tilde)
    norm = np.linalg.norm(g_tilde)
    scale = norm if norm > 0 else 1.0
    factors = [
        rng.standard_normal((chans[p + 1], chans[p], kernels[p], kernels[p])) / np.sqrt(chans[p] * kernels[p] ** 2)
        for p in range(len(kernels))
    ]
    rel = np.inf
    for _ in range(max_iter):
        for i in reversed(range(len(factors))):
            factors[i], res = _solve_factor(g_tilde, factors, i)
            rel = res / scale
        if rel <= tol:
            break
    return factors, rel


def morph_sequential(g, widths, kernels, seed: int = 0, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
    """Factor filter ``g`` into a chain of ``len(kernels)`` filters whose
    composition equals the zero-padded ``g`` within ``tol`` (relative).

    ``widths`` are the hidden channel counts between consecutive factors
    (one fewer than ``kernels``).  Solved by block coordinate descent on
    the factors; if that stalls, kernels of non-expanding factors are
    shrunk (and zero-padded back afterwards) as in the practical depth
    morph.
    """
    g = as_filter(g)
    c_out, c_in, k, _ = g.shape
    kernels = [int(v) for v in kernels]
    widths = [int(v) for v in widths]
    if len(kernels) < 2:
        raise ShapeError("a sequential morph needs at least two layers")
    if len(widths) != len(kernels) - 1:
        raise ShapeError(f"{len(kernels)} kernels need {len(kernels) - 1} widths, got {len(widths)}")
    if any(v < 1 for v in widths):
        raise ShapeError("widths must be positive")
    if any(v < 1 or v % 2 == 0 for v in kernels):
        raise ShapeError("kernels must be odd and >= 1")
    k_tilde = sum(kernels) - (len(kernels) - 1)
    if k_tilde < k or (k_tilde - k) % 2 != 0:
        raise ShapeError(f"effective kernel {k_tilde} incompatible with parent kernel {k}")

    if len(kernels) == 2:
        req = DepthMorphRequest(layer_index=0, c_l=widths[0], k1=kernels[0], k2=kernels[1], seed=seed, tol=tol)
        outcome = morph_practical(g, req)
        return [outcome.f_lo, outcome.f_hi]

    chans = [c_in] + widths + [c_out]
    counts = [chans[p + 1] * chans[p] * kernels[p] ** 2 for p in range(len(kernels))]
    expander = int(np.argmax(counts))
    if counts[expander] < g.size:
        raise InfeasibleMorphError(
            f"no factor has enough parameters to absorb the parent filter (need {g.size}, max is {counts[expander]})"
        )

    rng = make_rng(seed)
    work = list(kernels)
    while True:
        factors, rel = _run_bcd(g, widths, work, rng, tol, max_iter)
        if rel <= tol:
            return [pad_filter(f, kq) for f, kq in zip(factors, kernels)]
        # shrink the largest non-expanding kernel still above 1
        candidates = [
            p for p in range(len(work))
            if p != expander and work[p] > 2 and sum(work) - 2 - (len(work) - 1) >= k
        ]
        if not candidates:
            raise InfeasibleMorphError(
                f"sequential morph did not converge after full kernel shrink (residual {rel:.3e})"
            )
        p = max(candidates, key=lambda q: (work[q], q))
        work[p] -= 2


# ---------------------------------------------------------------------------
# stacked subnet morphing


def split_stacked(g, weights):
    """Split a filter into weighted copies summing back to the original."""
    g = as_filter(g)
    weights = [float(w) for w in weights]
    if abs(sum(weights) - 1.0) > 1e-12:
        raise ShapeError(f"split weights must sum to 1, got {sum(weights)}")
    return [w * g for w in weights]


def morph_stacked(net: NetworkDef, req: SubnetMorphRequest) -> NetworkDef:
    """Replace one conv layer by parallel sequential paths whose outputs
    sum to the parent layer's output (interior region for kernel growth)."""
    layers = list(net.layers)
    if not 0 <= req.layer_index < len(layers) or not isinstance(layers[req.layer_index], ConvLayer):
        raise ShapeError(f"layer {req.layer_index} is not a conv layer")
    target = layers[req.layer_index]
    k = target.kernel
    for spec in req.path_specs:
        if not spec:
            raise ShapeError("empty path spec")
        if spec[-1][1] != target.c_out:
            raise ShapeError(f"each path must end with {target.c_out} channels, got {spec[-1][1]}")
        k_eff = sum(kk for kk, _ in spec) - (len(spec) - 1)
        if k_eff < k or (k_eff - k) % 2 != 0:
            raise ShapeError(f"path effective kernel {k_eff} incompatible with parent kernel {k}")

    if len(req.path_specs) == 1 and len(req.path_specs[0]) == 1 and req.path_specs[0][0][0] == k:
        return net  # degenerate one-way stack of the original layer

    nxt = layers[req.layer_index + 1] if req.layer_index + 1 < len(layers) else None
    base = nxt.base if isinstance(nxt, PActLayer) else "relu"
    parts = split_stacked(target.weights, req.split_weights)

    paths = []
    for p, (g_i, spec) in enumerate(zip(parts, req.path_specs)):
        bias = target.bias if p == 0 else np.zeros(target.c_out)
        if len(spec) == 1:
            path = [same_pad_conv(pad_filter(g_i, spec[0][0]), bias=bias, fc=target.fc)]
        else:
            factors = morph_sequential(
                g_i,
                widths=[c for _, c in spec[:-1]],
                kernels=[kk for kk, _ in spec],
                seed=req.seed + p,
                tol=req.tol,
            )
            path = []
            for f in factors[:-1]:
                path.append(same_pad_conv(f, fc=target.fc))
                path.append(PActLayer(base=base, a=1.0))
            path.append(same_pad_conv(factors[-1], bias=bias, fc=target.fc))
        paths.append(tuple(path))

    layers[req.layer_index] = ParallelLayer(paths=tuple(paths))
    return net.with_layers(layers)
