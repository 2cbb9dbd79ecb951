"""Network intermediate representation and forward execution.

A network is an ordered chain of layers over (c, h, w) blobs:

* ``ConvLayer`` — multi-channel convolution plus per-channel bias.  Fully
  connected layers are the kernel-1 special case on a (c, 1, 1) blob and
  carry ``fc=True`` purely as a display hint.
* ``PActLayer`` — parametric activation (1-a)*phi(x) + a*x with
  a in [0, 1]; phi is ReLU, TanH or Sigmoid.  At a=1 the layer is the
  identity, at a=0 it is the plain activation.
* ``ParallelLayer`` — a stack of sequential paths evaluated on the same
  input blob and summed channel-wise (the stacked-subnet construct).

Layers are immutable after construction; every transformation builds a
new network.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ShapeError
from .tensor_ops import as_blob, as_filter, conv_mc

BASES = ("relu", "tanh", "sigmoid")


# ---------------------------------------------------------------------------
# parametric activations


def _phi(base: str, x):
    if base == "relu":
        return np.maximum(x, 0.0)
    if base == "tanh":
        return np.tanh(x)
    if base == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    raise ValueError(f"unknown activation base {base!r}")


def _phi_prime(base: str, x):
    if base == "relu":
        # subgradient 0 at the kink
        return (np.asarray(x) > 0).astype(np.float64)
    if base == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if base == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-x))
        return s * (1.0 - s)
    raise ValueError(f"unknown activation base {base!r}")


def _check_a(a: float):
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"activation parameter a={a} outside [0, 1]")


def pact_eval(base: str, a: float, x):
    """(1-a)*phi(x) + a*x; a=0 gives phi, a=1 gives the identity."""
    _check_a(a)
    return (1.0 - a) * _phi(base, x) + a * np.asarray(x, dtype=np.float64)


def pact_grad(base: str, a: float, x):
    """Partial derivatives (d/dx, d/da) of pact_eval at (a, x)."""
    _check_a(a)
    x = np.asarray(x, dtype=np.float64)
    d_dx = (1.0 - a) * _phi_prime(base, x) + a
    d_da = x - _phi(base, x)
    return d_dx, d_da


def phi_at_zero(base: str) -> float:
    return float(_phi(base, 0.0))


# ---------------------------------------------------------------------------
# layers


@dataclass(frozen=True)
class ConvLayer:
    weights: np.ndarray  # (c_out, c_in, k, k)
    bias: np.ndarray  # (c_out,)
    pad: int
    fc: bool = False

    def __post_init__(self):
        w = as_filter(self.weights)
        b = np.asarray(self.bias, dtype=np.float64)
        if b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise ShapeError(f"bias length {b.shape} does not match {w.shape[0]} output channels")
        if not np.all(np.isfinite(b)):
            raise ShapeError("bias contains non-finite entries")
        if w.shape[2] % 2 == 0:
            raise ShapeError(f"kernel size must be odd, got {w.shape[2]}")
        if self.pad != (w.shape[2] - 1) // 2:
            raise ShapeError(f"pad {self.pad} violates same-padding for kernel {w.shape[2]}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def c_out(self):
        return self.weights.shape[0]

    @property
    def c_in(self):
        return self.weights.shape[1]

    @property
    def kernel(self):
        return self.weights.shape[2]

    def apply(self, blob):
        out = conv_mc(blob, self.weights, self.pad)
        return out + self.bias[:, None, None]


@dataclass(frozen=True)
class PActLayer:
    base: str
    a: float

    def __post_init__(self):
        if self.base not in BASES:
            raise ValueError(f"unknown activation base {self.base!r}")
        _check_a(self.a)

    def apply(self, blob):
        return pact_eval(self.base, self.a, blob)


@dataclass(frozen=True)
class ParallelLayer:
    """Parallel paths over the same input, outputs summed channel-wise."""

    paths: tuple  # tuple of tuples of layers

    def __post_init__(self):
        paths = tuple(tuple(p) for p in self.paths)
        if not paths or any(not p for p in paths):
            raise ShapeError("parallel layer needs at least one non-empty path")
        object.__setattr__(self, "paths", paths)

    def apply(self, blob):
        total = None
        for path in self.paths:
            out = blob
            for layer in path:
                out = layer.apply(out)
            total = out if total is None else total + out
        return total


def same_pad_conv(weights, bias=None, fc=False) -> ConvLayer:
    """Convenience constructor enforcing the same-padding policy."""
    w = as_filter(weights)
    if bias is None:
        bias = np.zeros(w.shape[0])
    return ConvLayer(weights=w, bias=bias, pad=(w.shape[2] - 1) // 2, fc=fc)


# ---------------------------------------------------------------------------
# networks


def _chain_channels(layers, c_in):
    """Walk the layer chain checking channel compatibility; return c_out."""
    c = c_in
    for i, layer in enumerate(layers):
        if isinstance(layer, ConvLayer):
            if layer.c_in != c:
                raise ShapeError(f"layer {i}: expects {layer.c_in} input channels, gets {c}")
            c = layer.c_out
        elif isinstance(layer, ParallelLayer):
            outs = {_chain_channels(path, c) for path in layer.paths}
            if len(outs) != 1:
                raise ShapeError(f"layer {i}: parallel paths disagree on output channels {sorted(outs)}")
            c = outs.pop()
        elif isinstance(layer, PActLayer):
            pass
        else:
            raise ShapeError(f"layer {i}: unknown layer type {type(layer).__name__}")
    return c


@dataclass(frozen=True)
class NetworkDef:
    input_shape: tuple  # (c, h, w)
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        shape = tuple(int(v) for v in self.input_shape)
        if len(shape) != 3 or any(v < 1 for v in shape):
            raise ShapeError(f"input shape must be (c, h, w) positive, got {self.input_shape}")
        layers = tuple(self.layers)
        _chain_channels(layers, shape[0])
        object.__setattr__(self, "input_shape", shape)
        object.__setattr__(self, "layers", layers)

    @property
    def output_channels(self):
        return _chain_channels(self.layers, self.input_shape[0])

    def conv_indices(self):
        """Raw indices of top-level conv layers, in order."""
        return [i for i, l in enumerate(self.layers) if isinstance(l, ConvLayer)]

    def with_layers(self, layers):
        return replace(self, layers=tuple(layers))


def forward(net: NetworkDef, blob) -> np.ndarray:
    """Run the network on one blob and return the final blob."""
    blob = as_blob(blob)
    if blob.shape != net.input_shape:
        raise ShapeError(f"input shape {blob.shape} does not match network input {net.input_shape}")
    out = blob
    for layer in net.layers:
        out = layer.apply(out)
    return out
