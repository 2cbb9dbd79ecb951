"""Depth morphing: factor one conv filter into two and splice the new
layer pair (with an initially-linear parametric activation between them)
into the network.

Two solvers are provided.  The general solver alternates least-squares
half-steps on the two factors and drives the loss to zero whenever both
factors have at least as many parameters as the padded target (the
one-step convergence condition).  The practical solver runs the general
solver for a single iteration with a progressively shrinking working
kernel on the non-expanding side; the shrunk factor is zero-padded back
to the requested kernel afterwards, trading outer-ring sparsity for
guaranteed convergence in the expanding regime.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleMorphError, ShapeError
from .netdef import ConvLayer, NetworkDef, PActLayer, same_pad_conv
from .rng import make_rng
from .tensor_ops import as_filter, lstsq_factor_step, pad_filter

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 20


@dataclass(frozen=True)
class DepthMorphRequest:
    layer_index: int
    c_l: int
    k1: int
    k2: int
    max_iter: int = DEFAULT_MAX_ITER
    seed: int = 0
    tol: float = DEFAULT_TOL  # relative Frobenius residual treated as "loss = 0"

    def __post_init__(self):
        if self.c_l < 1:
            raise ShapeError(f"new hidden width must be >= 1, got {self.c_l}")
        if self.k1 < 1 or self.k1 % 2 == 0 or self.k2 < 1 or self.k2 % 2 == 0:
            raise ShapeError(f"factor kernels must be odd and >= 1, got k1={self.k1}, k2={self.k2}")
        if self.tol <= 0:
            raise ShapeError("tol must be positive")
        if self.max_iter < 1:
            raise ShapeError("max_iter must be >= 1")


@dataclass(frozen=True)
class MorphOutcome:
    f_lo: np.ndarray
    f_hi: np.ndarray
    residual: float  # relative Frobenius residual against the padded target
    iterations: int
    shrunk_kernel: int
    trace: tuple = field(default_factory=tuple)  # residual after each half-step


def converge_condition(c_lm1: int, c_l: int, c_lp1: int, k1: int, k2: int) -> bool:
    """One-step convergence test: both factors must carry at least as many
    parameters as the padded target filter."""
    if min(c_lm1, c_l, c_lp1, k1, k2) < 1:
        raise ShapeError("all counts must be positive")
    target = c_lp1 * c_lm1 * (k1 + k2 - 1) ** 2
    return min(c_l * c_lm1 * k1 * k1, c_lp1 * c_l * k2 * k2) >= target


def _check_parity(k: int, k1: int, k2: int):
    kt = k1 + k2 - 1
    if kt < k:
        raise ShapeError(f"effective kernel {kt} smaller than parent kernel {k}")
    if (kt - k) % 2 != 0:
        raise ShapeError(f"effective kernel {kt} and parent kernel {k} have mismatched parity")


def _init_factors(g, c_l, k1, k2, rng):
    c_lp1, c_lm1 = g.shape[0], g.shape[1]
    f_lo = rng.standard_normal((c_l, c_lm1, k1, k1)) / np.sqrt(c_lm1 * k1 * k1)
    f_hi = rng.standard_normal((c_lp1, c_l, k2, k2)) / np.sqrt(c_l * k2 * k2)
    return f_lo, f_hi


def _alternate(g_tilde, f_lo, f_hi, max_iter, tol):
    """Alternating least-squares on the two factors.  Returns the factors,
    the trace of relative residuals after each half-step, and the
    iteration count."""
    norm = np.linalg.norm(g_tilde)
    scale = norm if norm > 0 else 1.0
    trace = []
    iterations = 0
    rel = np.inf
    for _ in range(max_iter):
        iterations += 1
        f_hi, res = lstsq_factor_step(g_tilde, f_lo, "upper")
        trace.append(res / scale)
        f_lo, res = lstsq_factor_step(g_tilde, f_hi, "lower")
        rel = res / scale
        trace.append(rel)
        if rel <= tol:
            break
    return f_lo, f_hi, trace, iterations, rel


def rebalance(f_lo, f_hi):
    """Rescale the factor pair to equal spread without changing their
    composition: f_lo * s and f_hi / s with s = sqrt(spread_hi/spread_lo).

    Spread is the standard deviation of the entries; single-entry factors
    fall back to the absolute value so the scalar case stays defined.
    """
    f_lo = as_filter(f_lo)
    f_hi = as_filter(f_hi)

    def spread(t):
        return float(np.std(t)) if t.size > 1 else float(abs(t.reshape(-1)[0]))

    s_lo, s_hi = spread(f_lo), spread(f_hi)
    if s_lo == 0.0 or s_hi == 0.0:
        raise ShapeError("cannot rebalance a zero-spread factor")
    s = np.sqrt(s_hi / s_lo)
    return f_lo * s, f_hi / s


def morph_general(g, req: DepthMorphRequest) -> MorphOutcome:
    """Alternating-least-squares factorization of g (general algorithm)."""
    g = as_filter(g)
    k = g.shape[2]
    _check_parity(k, req.k1, req.k2)
    rng = make_rng(req.seed)
    g_tilde = pad_filter(g, req.k1 + req.k2 - 1)
    f_lo, f_hi = _init_factors(g, req.c_l, req.k1, req.k2, rng)
    f_lo, f_hi, trace, iterations, rel = _alternate(g_tilde, f_lo, f_hi, req.max_iter, req.tol)
    f_lo, f_hi = rebalance(f_lo, f_hi)
    return MorphOutcome(
        f_lo=f_lo, f_hi=f_hi, residual=rel, iterations=iterations,
        shrunk_kernel=req.k2, trace=tuple(trace),
    )


def _practical_one_side(g, req, shrink_side, rng):
    """Shrink the working kernel on one side until the single-iteration
    solve converges.  Returns an outcome or None."""
    k = g.shape[2]
    for kr in range(req.k2 if shrink_side == "hi" else req.k1, 0, -2):
        k1 = req.k1 if shrink_side == "hi" else kr
        k2 = kr if shrink_side == "hi" else req.k2
        if k1 + k2 - 1 < k:
            break
        g_tilde = pad_filter(g, k1 + k2 - 1)
        f_lo, f_hi = _init_factors(g, req.c_l, k1, k2, rng)
        f_lo, f_hi, trace, _, rel = _alternate(g_tilde, f_lo, f_hi, 1, req.tol)
        if rel <= req.tol:
            # pad the shrunk factor back to its requested kernel
            if shrink_side == "hi":
                f_hi = pad_filter(f_hi, req.k2)
            else:
                f_lo = pad_filter(f_lo, req.k1)
            f_lo, f_hi = rebalance(f_lo, f_hi)
            return MorphOutcome(
                f_lo=f_lo, f_hi=f_hi, residual=rel, iterations=1,
                shrunk_kernel=kr, trace=tuple(trace),
            )
    return None


def morph_practical(g, req: DepthMorphRequest) -> MorphOutcome:
    """Single-iteration factorization with kernel shrinking (practical
    algorithm).  Requires that at least one factor has as many parameters
    as the parent filter ("expands" it)."""
    g = as_filter(g)
    c_lp1, c_lm1, k, _ = g.shape
    _check_parity(k, req.k1, req.k2)
    count_g = g.size
    lo_expands = req.c_l * c_lm1 * req.k1 * req.k1 >= count_g
    hi_expands = c_lp1 * req.c_l * req.k2 * req.k2 >= count_g
    if not lo_expands and not hi_expands:
        raise InfeasibleMorphError(
            "neither factor has enough parameters to absorb the parent filter "
            f"(need {count_g}, have lo={req.c_l * c_lm1 * req.k1**2}, hi={c_lp1 * req.c_l * req.k2**2})"
        )
    # Shrink the non-expanding side's kernel; when both sides expand,
    # shrink the side with the smaller kernel first (K2 on a tie).
    if lo_expands and hi_expands:
        order = ["hi", "lo"] if req.k2 <= req.k1 else ["lo", "hi"]
    elif lo_expands:
        order = ["hi"]
    else:
        order = ["lo"]
    rng = make_rng(req.seed)
    for side in order:
        outcome = _practical_one_side(g, req, side, rng)
        if outcome is not None:
            return outcome
    raise InfeasibleMorphError(
        "kernel shrinking exhausted without reaching zero loss; the requested "
        f"hidden width {req.c_l} cannot represent the parent filter exactly"
    )


def insert_depth(net: NetworkDef, req: DepthMorphRequest, algorithm: str = "practical") -> NetworkDef:
    """Replace conv layer ``layer_index`` by the factor pair with an
    identity-parameter activation between them.  The lower conv gets zero
    bias, the upper conv inherits the parent bias, and any activation
    already following the parent layer is retained unchanged."""
    layers = list(net.layers)
    if not 0 <= req.layer_index < len(layers):
        raise ShapeError(f"layer index {req.layer_index} out of range")
    target = layers[req.layer_index]
    if not isinstance(target, ConvLayer):
        raise ShapeError(f"layer {req.layer_index} is not a conv layer")
    solver = {"general": morph_general, "practical": morph_practical}.get(algorithm)
    if solver is None:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    outcome = solver(target.weights, req)
    nxt = layers[req.layer_index + 1] if req.layer_index + 1 < len(layers) else None
    base = nxt.base if isinstance(nxt, PActLayer) else "relu"
    replacement = [
        same_pad_conv(outcome.f_lo, fc=target.fc),
        PActLayer(base=base, a=1.0),
        same_pad_conv(outcome.f_hi, bias=target.bias, fc=target.fc),
    ]
    layers[req.layer_index : req.layer_index + 1] = replacement
    return net.with_layers(layers)
