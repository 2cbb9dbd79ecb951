"""Verification oracle: function-preservation checking plus filter
occupancy and parameter-scale statistics.

Preservation is checked pointwise on random Gaussian inputs.  When the
child's filters have grown structural support relative to the parent, a
border of the corresponding width is cropped before comparing, since
composed convolutions only match a single convolution away from the
zero-padded image edge.  Structural support ignores zero outer rings, so
kernel-size morphs (zero-ring growth) and practical depth morphs with a
zero-padded factor are credited as exact.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .netdef import ConvLayer, NetworkDef, ParallelLayer, forward
from .rng import make_rng

ZERO_THRESHOLD = 1e-12


def support_radius(f) -> int:
    """Radius of the smallest centered kernel window containing every
    entry with magnitude above the structural-zero threshold."""
    f = np.asarray(f)
    k = f.shape[2]
    half = (k - 1) // 2
    mag = np.abs(f).max(axis=(0, 1))
    for r in range(half, 0, -1):
        ring = mag.copy()
        ring[half - r + 1 : half + r, half - r + 1 : half + r] = 0.0
        outer = ring[half - r : half + r + 1, half - r : half + r + 1]
        if outer.max() > ZERO_THRESHOLD:
            return r
    return 0


def _boundary_score(layers) -> int:
    score = 0
    for layer in layers:
        if isinstance(layer, ConvLayer):
            score += support_radius(layer.weights)
        elif isinstance(layer, ParallelLayer):
            score += max(_boundary_score(path) for path in layer.paths)
    return score


def _layers_equal(a, b) -> bool:
    if type(a) is not type(b):
        return False
    if isinstance(a, ConvLayer):
        return (
            a.weights.shape == b.weights.shape
            and np.array_equal(a.weights, b.weights)
            and np.array_equal(a.bias, b.bias)
        )
    if isinstance(a, ParallelLayer):
        return len(a.paths) == len(b.paths) and all(
            len(p) == len(q) and all(_layers_equal(x, y) for x, y in zip(p, q))
            for p, q in zip(a.paths, b.paths)
        )
    return a == b


def crop_border_for(parent: NetworkDef, child: NetworkDef) -> int:
    """Width of the image border on which parent and child may disagree.

    The nets are aligned from the tail; layers the morph left untouched
    are identical there.  Any support growth in the differing head seeds
    a boundary error of that width, which each downstream conv layer then
    spreads further by its own support radius.  Zero head growth (width
    and kernel-size morphs, depth morphs with a kernel-1 upper factor)
    means the morph is exact everywhere.
    """
    pa, ch = list(parent.layers), list(child.layers)
    tail = []
    while pa and ch and _layers_equal(pa[-1], ch[-1]):
        tail.append(pa.pop())
        ch.pop()
    growth = _boundary_score(ch) - _boundary_score(pa)
    if growth <= 0:
        return 0
    return growth + _boundary_score(tail)


@dataclass(frozen=True)
class PreservationReport:
    samples: int
    max_abs_dev: float
    crop_border: int
    exact_mode: bool
    pass_: bool
    tol: float

    def to_text(self) -> str:
        return "\n".join(
            [
                f"samples={self.samples}",
                f"max_abs_dev={self.max_abs_dev:.6e}",
                f"crop_border={self.crop_border}",
                f"exact_mode={'true' if self.exact_mode else 'false'}",
                f"tol={self.tol:.6e}",
                f"pass={'true' if self.pass_ else 'false'}",
            ]
        )


def check_preservation(parent: NetworkDef, child: NetworkDef, n_samples: int, tol: float, seed: int = 0) -> PreservationReport:
    """Compare parent and child outputs on random Gaussian inputs."""
    if parent.input_shape != child.input_shape:
        raise ShapeError(f"input shapes differ: {parent.input_shape} vs {child.input_shape}")
    if n_samples < 1:
        raise ShapeError("n_samples must be >= 1")
    border = crop_border_for(parent, child)
    _, h, w = parent.input_shape
    if h > 1 and w > 1 and (h - 2 * border <= 0 or w - 2 * border <= 0):
        raise ShapeError(f"crop border {border} leaves no interior on a {h}x{w} input")
    rng = make_rng(seed)
    max_dev = 0.0
    for _ in range(n_samples):
        x = rng.standard_normal(parent.input_shape)
        pa = forward(parent, x)
        ch = forward(child, x)
        if pa.shape != ch.shape:
            raise ShapeError(f"output shapes differ: {pa.shape} vs {ch.shape}")
        if border > 0 and pa.shape[1] > 1 and pa.shape[2] > 1:
            pa = pa[:, border:-border, border:-border]
            ch = ch[:, border:-border, border:-border]
        max_dev = max(max_dev, float(np.abs(pa - ch).max()))
    return PreservationReport(
        samples=n_samples,
        max_abs_dev=max_dev,
        crop_border=border,
        exact_mode=border == 0,
        pass_=max_dev <= tol,
        tol=tol,
    )


@dataclass(frozen=True)
class OccupancyStats:
    total: int
    nonzero: int
    fraction: float

    def to_text(self) -> str:
        return f"total={self.total}\nnonzero={self.nonzero}\nfraction={self.fraction:.6e}"


def occupancy(f) -> OccupancyStats:
    """Fraction of filter entries that are structurally nonzero."""
    f = np.asarray(f)
    nonzero = int(np.count_nonzero(np.abs(f) > ZERO_THRESHOLD))
    total = int(f.size)
    return OccupancyStats(total=total, nonzero=nonzero, fraction=nonzero / total if total else 0.0)


def param_stats(f, bins: int = 64):
    """Sample mean, standard deviation, and a fixed-bin histogram over
    [min, max] of the filter entries."""
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    if f.size == 0:
        raise ShapeError("cannot compute statistics of an empty tensor")
    mean = float(f.mean())
    std = float(f.std())
    lo, hi = float(f.min()), float(f.max())
    if lo == hi:
        counts = np.zeros(bins, dtype=np.int64)
        counts[0] = f.size
    else:
        counts, _ = np.histogram(f, bins=bins, range=(lo, hi))
    return mean, std, counts
