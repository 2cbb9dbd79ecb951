"""Desk-scale supervised training: MNIST IDX ingestion, softmax
cross-entropy, backpropagation through conv / fully-connected /
parametric-activation layers (including the activation parameter), and
minibatch SGD with momentum.

Training operates on batched blobs (n, c, h, w).  The kernel-1 case on
(c, 1, 1) blobs reduces to plain matrix products, which keeps the MNIST
experiments fast without a separate dense-layer code path.
"""

import gzip
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import FormatError, ShapeError
from .netdef import ConvLayer, NetworkDef, PActLayer, _phi, _phi_prime, pact_eval
from .rng import make_rng

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (n, c, h, w), values in [0, 1]
    labels: np.ndarray  # (n,), class indices

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ShapeError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    momentum: float = 0.9
    a_learning_rate: float = 0.01

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ShapeError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ShapeError("batch_size must be >= 1")


# ---------------------------------------------------------------------------
# MNIST IDX ingestion


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated IDX file: expected {n} bytes of {what}, got {len(data)}")
    return data


def _open_idx(path):
    """Open an IDX file, transparently decompressing gzip."""
    fh = open(path, "rb")
    if fh.read(2) == b"\x1f\x8b":
        fh.close()
        return gzip.open(path, "rb")
    fh.seek(0)
    return fh


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Load an images/labels IDX pair; pixels are scaled to [0, 1]."""
    with _open_idx(images_path) as fh:
        magic, count, rows, cols = struct.unpack(">4i", _read_exact(fh, 16, "image header"))
        if magic != IMAGES_MAGIC:
            raise FormatError(f"bad magic {magic:#010x} in images file (expected {IMAGES_MAGIC:#010x})")
        if min(count, rows, cols) <= 0:
            raise FormatError(f"bad image dimensions {count}x{rows}x{cols}")
        raw = _read_exact(fh, count * rows * cols, "pixels")
        if fh.read(1):
            raise FormatError("trailing bytes after image payload")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, 1, rows, cols).astype(np.float64) / 255.0

    with _open_idx(labels_path) as fh:
        magic, lcount = struct.unpack(">2i", _read_exact(fh, 8, "label header"))
        if magic != LABELS_MAGIC:
            raise FormatError(f"bad magic {magic:#010x} in labels file (expected {LABELS_MAGIC:#010x})")
        if lcount != count:
            raise FormatError(f"dimension mismatch: {count} images but {lcount} labels")
        labels = np.frombuffer(_read_exact(fh, lcount, "labels"), dtype=np.uint8).astype(np.int64)
        if fh.read(1):
            raise FormatError("trailing bytes after label payload")
    return Dataset(images=images, labels=labels)


# ---------------------------------------------------------------------------
# batched forward / backward


def _im2col(x, k, pad):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (n, c, oh, ow, k, k)
    oh, ow = win.shape[2], win.shape[3]
    col = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * k * k)
    return col, oh, ow


def _col2im(col, x_shape, k, pad, oh, ow):
    n, c, h, w = x_shape
    col = col.reshape(n, oh, ow, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for u in range(k):
        for v in range(k):
            img[:, :, u : u + oh, v : v + ow] += col[:, :, u, v]
    return img[:, :, pad : pad + h, pad : pad + w]


def _conv_forward(w, b, pad, x):
    n = x.shape[0]
    c_out, _, k, _ = w.shape
    if k == 1 and x.shape[2] == 1 and x.shape[3] == 1:
        col = x.reshape(n, -1)
        out = col @ w.reshape(c_out, -1).T + b
        return out.reshape(n, c_out, 1, 1), (col, 1, 1)
    col, oh, ow = _im2col(x, k, pad)
    out = col @ w.reshape(c_out, -1).T + b
    return out.reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2), (col, oh, ow)


def _conv_backward(w, pad, x_shape, cache, d_out):
    col, oh, ow = cache
    n = d_out.shape[0]
    c_out, _, k, _ = w.shape
    if oh == 1 and ow == 1 and k == 1:
        d_mat = d_out.reshape(n, c_out)
    else:
        d_mat = d_out.transpose(0, 2, 3, 1).reshape(n * oh * ow, c_out)
    d_w = (d_mat.T @ col).reshape(w.shape)
    d_b = d_mat.sum(axis=0)
    d_col = d_mat @ w.reshape(c_out, -1)
    if oh == 1 and ow == 1 and k == 1:
        d_x = d_col.reshape(x_shape)
    else:
        d_x = _col2im(d_col, x_shape, k, pad, oh, ow)
    return d_x, d_w, d_b


def forward_batch(net: NetworkDef, x) -> np.ndarray:
    """Batched forward pass; x has shape (n,) + net.input_shape."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != net.input_shape:
        raise ShapeError(f"batch item shape {x.shape[1:]} does not match network input {net.input_shape}")
    for layer in net.layers:
        if isinstance(layer, ConvLayer):
            x, _ = _conv_forward(layer.weights, layer.bias, layer.pad, x)
        elif isinstance(layer, PActLayer):
            x = pact_eval(layer.base, layer.a, x)
        else:
            x = np.stack([forward_batch_path(path, x) for path in layer.paths]).sum(axis=0)
    return x


def forward_batch_path(path, x):
    for layer in path:
        if isinstance(layer, ConvLayer):
            x, _ = _conv_forward(layer.weights, layer.bias, layer.pad, x)
        elif isinstance(layer, PActLayer):
            x = pact_eval(layer.base, layer.a, x)
        else:
            raise ShapeError("nested parallel layers are not supported in training")
    return x


class _TrainState:
    """Mutable parameter copies plus momentum buffers for one network."""

    def __init__(self, net: NetworkDef):
        for layer in net.layers:
            if not isinstance(layer, (ConvLayer, PActLayer)):
                raise ShapeError("training supports plain conv/activation chains only")
        self.net = net
        self.params = []
        for layer in net.layers:
            if isinstance(layer, ConvLayer):
                self.params.append({"w": layer.weights.copy(), "b": layer.bias.copy()})
            else:
                self.params.append({"a": float(layer.a)})
        self.velocity = [
            {k: np.zeros_like(v) if isinstance(v, np.ndarray) else 0.0 for k, v in p.items()}
            for p in self.params
        ]

    def forward_backward(self, x, labels):
        """Cross-entropy loss and parameter gradients for one minibatch."""
        n = x.shape[0]
        acts = [x]
        caches = []
        for layer, p in zip(self.net.layers, self.params):
            if isinstance(layer, ConvLayer):
                x, cache = _conv_forward(p["w"], p["b"], layer.pad, x)
                caches.append(cache)
            else:
                caches.append(None)
                x = pact_eval(layer.base, p["a"], x)
            acts.append(x)

        logits = x.reshape(n, -1)
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=1, keepdims=True)
        loss = float(-np.log(probs[np.arange(n), labels] + 1e-300).mean())

        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        d = (d / n).reshape(x.shape)

        grads = [None] * len(self.params)
        for i in reversed(range(len(self.net.layers))):
            layer = self.net.layers[i]
            p = self.params[i]
            if isinstance(layer, ConvLayer):
                d, d_w, d_b = _conv_backward(p["w"], layer.pad, acts[i].shape, caches[i], d)
                grads[i] = {"w": d_w, "b": d_b}
            else:
                xin = acts[i]
                d_dx = (1.0 - p["a"]) * _phi_prime(layer.base, xin) + p["a"]
                d_da = float(((xin - _phi(layer.base, xin)) * d).sum())
                grads[i] = {"a": d_da}
                d = d * d_dx
        return loss, grads

    def sgd_step(self, grads, cfg: TrainConfig):
        for p, v, g in zip(self.params, self.velocity, grads):
            if "w" in p:
                v["w"] = cfg.momentum * v["w"] - cfg.learning_rate * g["w"]
                v["b"] = cfg.momentum * v["b"] - cfg.learning_rate * g["b"]
                p["w"] += v["w"]
                p["b"] += v["b"]
            else:
                v["a"] = cfg.momentum * v["a"] - cfg.a_learning_rate * g["a"]
                p["a"] = float(np.clip(p["a"] + v["a"], 0.0, 1.0))

    def to_network(self) -> NetworkDef:
        layers = []
        for layer, p in zip(self.net.layers, self.params):
            if isinstance(layer, ConvLayer):
                layers.append(ConvLayer(weights=p["w"].copy(), bias=p["b"].copy(), pad=layer.pad, fc=layer.fc))
            else:
                layers.append(PActLayer(base=layer.base, a=p["a"]))
        return self.net.with_layers(layers)


def _shaped_images(net: NetworkDef, images):
    """Reshape dataset images to the network's input shape if the element
    counts agree (e.g. 1x28x28 images into a 784x1x1 classic network)."""
    want = net.input_shape
    if images.shape[1:] == want:
        return images
    if int(np.prod(images.shape[1:])) != int(np.prod(want)):
        raise ShapeError(f"dataset items {images.shape[1:]} cannot feed network input {want}")
    return images.reshape((images.shape[0],) + want)


def train_sgd(net: NetworkDef, dataset: Dataset, cfg: TrainConfig):
    """Minibatch SGD with momentum; returns (trained net, per-epoch loss)."""
    x_all = _shaped_images(net, dataset.images)
    y_all = np.asarray(dataset.labels)
    state = _TrainState(net)
    rng = make_rng(cfg.seed)
    trace = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        total, batches = 0.0, 0
        for start in range(0, len(dataset), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = state.forward_backward(x_all[idx], y_all[idx])
            state.sgd_step(grads, cfg)
            total += loss
            batches += 1
        trace.append(total / max(batches, 1))
    return state.to_network(), trace


def evaluate(net: NetworkDef, dataset: Dataset, batch_size: int = 256) -> float:
    """Fraction of argmax-correct predictions."""
    x_all = _shaped_images(net, dataset.images)
    y_all = np.asarray(dataset.labels)
    correct = 0
    for start in range(0, len(dataset), batch_size):
        out = forward_batch(net, x_all[start : start + batch_size])
        pred = out.reshape(out.shape[0], -1).argmax(axis=1)
        correct += int((pred == y_all[start : start + batch_size]).sum())
    return correct / len(dataset)


def predictions(net: NetworkDef, dataset: Dataset, batch_size: int = 256) -> np.ndarray:
    """Argmax class predictions for every dataset item."""
    x_all = _shaped_images(net, dataset.images)
    preds = []
    for start in range(0, len(dataset), batch_size):
        out = forward_batch(net, x_all[start : start + batch_size])
        preds.append(out.reshape(out.shape[0], -1).argmax(axis=1))
    return np.concatenate(preds)
