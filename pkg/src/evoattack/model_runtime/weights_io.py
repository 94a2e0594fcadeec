"""Binary weight files (``.evoq``), little-endian throughout.

Layout::

    b"EVOQ"                         magic
    u32 version                     currently 1
    u32 channels, height, width     input shape
    u32 num_classes
    u32 layer_count
    per layer:
        u8  tag                     1 conv, 2 batchnorm, 3 relu, 4 maxpool, 5 dropout, 6 dense
        u8  n_hyper, u32 * n_hyper  conv: out, kernel, stride, padding
                                    maxpool: kernel, stride
                                    dropout: rate * 1e6
                                    dense: out_features
        u8  n_tensors
        per tensor: u8 rank, u32 * rank dims, float32 payload
"""

from __future__ import annotations

import struct

import numpy as np

from .architecture import BatchNorm, Conv, Dense, Dropout, MaxPool, ModelSpec, ReLU, SpecError
from .model import MalformedWeightsError, check_weights

MAGIC = b"EVOQ"
VERSION = 1

_TAGS = {Conv: 1, BatchNorm: 2, ReLU: 3, MaxPool: 4, Dropout: 5, Dense: 6}
_PARAM_ORDER = {
    Conv: ("weight", "bias"),
    BatchNorm: ("gamma", "beta", "running_mean", "running_var"),
    Dense: ("weight", "bias"),
}


class WeightFileError(ValueError):
    pass


class BadMagicError(WeightFileError):
    pass


class TruncatedWeightsError(WeightFileError):
    pass


class WeightShapeError(WeightFileError):
    pass


def _hyper(layer) -> list[int]:
    if isinstance(layer, Conv):
        return [layer.out_channels, layer.kernel, layer.stride, layer.padding]
    if isinstance(layer, MaxPool):
        return [layer.kernel, layer.stride]
    if isinstance(layer, Dropout):
        return [int(round(layer.rate * 1_000_000))]
    if isinstance(layer, Dense):
        return [layer.out_features]
    return []


def _layer_from(tag: int, hyper: list[int]):
    try:
        if tag == 1:
            return Conv(*hyper)
        if tag == 2 and not hyper:
            return BatchNorm()
        if tag == 3 and not hyper:
            return ReLU()
        if tag == 4:
            return MaxPool(*hyper)
        if tag == 5 and len(hyper) == 1:
            return Dropout(hyper[0] / 1_000_000)
        if tag == 6:
            return Dense(*hyper)
    except TypeError as exc:
        raise WeightFileError(f"bad hyperparameters {hyper} for layer tag {tag}") from exc
    raise WeightFileError(f"unknown layer tag {tag} with hyperparameters {hyper}")


def save_weights(path, spec: ModelSpec, weights) -> None:
    check_weights(spec, weights)
    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    out += struct.pack("<4I", *spec.input_shape, spec.num_classes)
    out += struct.pack("<I", len(spec.layers))
    for layer, params in zip(spec.layers, weights):
        out += struct.pack("<B", _TAGS[type(layer)])
        hyper = _hyper(layer)
        out += struct.pack(f"<B{len(hyper)}I", len(hyper), *hyper)
        names = _PARAM_ORDER.get(type(layer), ())
        out += struct.pack("<B", len(names))
        for name in names:
            arr = np.asarray(params[name], dtype="<f4")
            out += struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape)
            out += arr.tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedWeightsError(
                f"file truncated while reading {what}: need {n} bytes at offset {self.pos}, "
                f"{len(self.buf) - self.pos} left"
            )
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_weights(path):
    """Read a weight file; returns ``(spec, weights)`` with float32 arrays."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    r = _Reader(buf)
    r.pos = 4
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise WeightFileError(f"{path}: unsupported format version {version}")
    c, h, w, classes = r.unpack("<4I", "header")
    (n_layers,) = r.unpack("<I", "layer count")
    layers, tensors = [], []
    for i in range(n_layers):
        (tag,) = r.unpack("<B", f"layer {i} tag")
        (n_hyper,) = r.unpack("<B", f"layer {i} hyperparameter count")
        hyper = list(r.unpack(f"<{n_hyper}I", f"layer {i} hyperparameters"))
        layer = _layer_from(tag, hyper)
        (n_tensors,) = r.unpack("<B", f"layer {i} tensor count")
        arrays = []
        for t in range(n_tensors):
            (rank,) = r.unpack("<B", f"layer {i} tensor {t} rank")
            dims = r.unpack(f"<{rank}I", f"layer {i} tensor {t} dims")
            count = int(np.prod(dims)) if rank else 1
            payload = r.take(4 * count, f"layer {i} tensor {t} payload")
            arrays.append(np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32))
        layers.append(layer)
        tensors.append(arrays)
    if r.pos != len(buf):
        raise WeightFileError(f"{path}: {len(buf) - r.pos} trailing bytes after last layer")
    try:
        spec = ModelSpec((c, h, w), classes, tuple(layers))
    except SpecError as exc:
        raise WeightShapeError(f"{path}: layers do not compose: {exc}") from exc
    weights = []
    for i, (layer, arrays) in enumerate(zip(layers, tensors)):
        names = _PARAM_ORDER.get(type(layer), ())
        if len(arrays) != len(names):
            raise WeightShapeError(f"{path}: layer {i} has {len(arrays)} tensors, expected {len(names)}")
        weights.append(dict(zip(names, arrays)))
    try:
        check_weights(spec, weights)
    except MalformedWeightsError as exc:
        raise WeightShapeError(f"{path}: {exc}") from exc
    return spec, weights
