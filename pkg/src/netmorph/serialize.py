"""NMPH weight-file format, version 1.

Layout::

    bytes 0..4    magic 4E 4D 50 48 01  ("NMPH" + version byte)
    u32 LE        manifest length in bytes
    ...           UTF-8 JSON manifest
    ...           tensor payload area
    u32 LE        CRC-32 of every byte before it

The manifest holds ``input_shape`` and the layer list; conv layers carry
``weights`` / ``bias`` byte offsets measured from the start of the tensor
payload area.  Every tensor is stored as a 16-byte header of four u32 LE
dims followed by little-endian IEEE-754 float64 values in row-major
order.  Biases are stored with dims (c_out, 1, 1, 1).

Serialization is canonical (sorted JSON keys, compact separators), so
serialize -> deserialize -> serialize is byte-identical.
"""

import json
import struct
import zlib

import numpy as np

from .errors import FormatError
from .netdef import ConvLayer, NetworkDef, PActLayer, ParallelLayer

MAGIC = b"NMPH\x01"


class _TensorArea:
    def __init__(self):
        self.chunks = []
        self.offset = 0

    def add(self, arr4d) -> int:
        arr = np.ascontiguousarray(arr4d, dtype="<f8")
        if arr.ndim != 4:
            raise FormatError(f"payload tensors must be rank-4, got {arr.ndim}")
        header = struct.pack("<4I", *arr.shape)
        chunk = header + arr.tobytes()
        off = self.offset
        self.chunks.append(chunk)
        self.offset += len(chunk)
        return off

    def bytes(self):
        return b"".join(self.chunks)


def _layer_manifest(layer, area: _TensorArea):
    if isinstance(layer, ConvLayer):
        w_off = area.add(layer.weights)
        b_off = area.add(layer.bias.reshape(-1, 1, 1, 1))
        return {
            "kind": "conv",
            "c_out": layer.c_out,
            "c_in": layer.c_in,
            "kernel": layer.kernel,
            "pad": layer.pad,
            "fc": bool(layer.fc),
            "weights": w_off,
            "bias": b_off,
        }
    if isinstance(layer, PActLayer):
        return {"kind": "pact", "base": layer.base, "a": layer.a}
    if isinstance(layer, ParallelLayer):
        return {"kind": "parallel", "paths": [[_layer_manifest(l, area) for l in path] for path in layer.paths]}
    raise FormatError(f"cannot serialize layer type {type(layer).__name__}")


def serialize(net: NetworkDef) -> bytes:
    area = _TensorArea()
    manifest = {
        "input_shape": list(net.input_shape),
        "layers": [_layer_manifest(l, area) for l in net.layers],
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<I", len(mbytes)) + mbytes + area.bytes()
    return body + struct.pack("<I", zlib.crc32(body))


class _TensorReader:
    def __init__(self, payload: bytes):
        self.payload = payload

    def read(self, offset: int) -> np.ndarray:
        if offset < 0 or offset + 16 > len(self.payload):
            raise FormatError(f"tensor header at offset {offset} lies outside the payload area")
        dims = struct.unpack("<4I", self.payload[offset : offset + 16])
        n = int(np.prod(dims))
        start = offset + 16
        end = start + 8 * n
        if end > len(self.payload):
            raise FormatError(f"tensor at offset {offset} declares {n} values but the payload is truncated")
        data = np.frombuffer(self.payload[start:end], dtype="<f8")
        return data.reshape(dims).astype(np.float64)


def _layer_from_manifest(entry, reader: _TensorReader):
    kind = entry.get("kind")
    if kind == "conv":
        weights = reader.read(entry["weights"])
        bias = reader.read(entry["bias"]).reshape(-1)
        if weights.shape != (entry["c_out"], entry["c_in"], entry["kernel"], entry["kernel"]):
            raise FormatError(f"conv tensor shape {weights.shape} disagrees with its manifest entry")
        return ConvLayer(weights=weights, bias=bias, pad=entry["pad"], fc=entry.get("fc", False))
    if kind == "pact":
        return PActLayer(base=entry["base"], a=entry["a"])
    if kind == "parallel":
        return ParallelLayer(paths=tuple(tuple(_layer_from_manifest(e, reader) for e in path) for path in entry["paths"]))
    raise FormatError(f"unknown layer kind {kind!r} in manifest")


def deserialize(data: bytes) -> NetworkDef:
    if len(data) < len(MAGIC) + 8:
        raise FormatError("file too short to be an NMPH weight file")
    if data[:4] != MAGIC[:4]:
        raise FormatError("bad magic: not an NMPH weight file")
    if data[4] != MAGIC[4]:
        raise FormatError(f"unsupported NMPH version {data[4]}")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != stored_crc:
        raise FormatError("checksum failure: file is corrupt")
    (mlen,) = struct.unpack("<I", data[5:9])
    mstart, mend = 9, 9 + mlen
    if mend > len(data) - 4:
        raise FormatError("truncated manifest")
    try:
        manifest = json.loads(data[mstart:mend].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable manifest: {exc}") from exc
    reader = _TensorReader(data[mend:-4])
    try:
        layers = [_layer_from_manifest(e, reader) for e in manifest["layers"]]
        return NetworkDef(input_shape=tuple(manifest["input_shape"]), layers=layers)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed manifest: {exc}") from exc


def save(net: NetworkDef, path):
    with open(path, "wb") as fh:
        fh.write(serialize(net))


def load(path) -> NetworkDef:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
