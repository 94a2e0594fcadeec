"""Non-differentiable input transformations, applied in front of an oracle.

Supported defense strings: ``jpeg:Q`` (1..100), ``bitdepth:D`` (1..8),
``smooth:W`` (median, odd W) and ``meansmooth:W`` (box mean, odd W).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft, ndimage

from .model_runtime.oracle import QueryOracle

# ITU T.81 Annex K luminance table
JPEG_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


def bit_depth_reduce(x, d: int) -> np.ndarray:
    if not (1 <= d <= 8):
        raise ValueError(f"bit depth must lie in [1, 8], got {d}")
    levels = 2 ** d - 1
    return np.rint(np.asarray(x, dtype=np.float64) * levels) / levels


def spatial_smooth(x, w: int, method: str = "median") -> np.ndarray:
    """Per-channel w x w median (or mean) filter with symmetric edge padding
    (the edge pixel is repeated: ``d c b a | a b c d``)."""
    if w < 1 or w % 2 == 0:
        raise ValueError(f"window must be odd and >= 1, got {w}")
    x = np.asarray(x, dtype=np.float64)
    if method == "median":
        return ndimage.median_filter(x, size=(1, w, w), mode="reflect")
    if method == "mean":
        return ndimage.uniform_filter(x, size=(1, w, w), mode="reflect")
    raise ValueError(f"unknown smoothing method {method!r}")


def jpeg_quant_table(q: int) -> np.ndarray:
    if not (1 <= q <= 100):
        raise ValueError(f"JPEG quality must lie in [1, 100], got {q}")
    scale = 5000 / q if q < 50 else 200 - 2 * q
    return np.maximum(1.0, np.floor(JPEG_LUMA_TABLE * scale / 100 + 0.5))


def jpeg_like_compress(x, q: int) -> np.ndarray:
    """Lossy JPEG round trip in the pixel domain, each channel on its own.

    Values are shifted to [-127.5, 127.5], cut into 8x8 blocks (edges padded by
    replication), DCT-transformed, quantised with the quality-scaled luminance
    table, then decoded and clamped to [0, 1]. No colour conversion, chroma
    subsampling or entropy coding.
    """
    table = jpeg_quant_table(q)
    x = np.asarray(x, dtype=np.float64)
    c, h, w = x.shape
    ph, pw = -h % 8, -w % 8
    shifted = np.pad((x - 0.5) * 255.0, ((0, 0), (0, ph), (0, pw)), mode="edge")
    hb, wb = shifted.shape[1] // 8, shifted.shape[2] // 8
    blocks = shifted.reshape(c, hb, 8, wb, 8).transpose(0, 1, 3, 2, 4)
    coeffs = fft.dctn(blocks, type=2, axes=(-2, -1), norm="ortho")
    coeffs = np.round(coeffs / table) * table
    decoded = fft.idctn(coeffs, type=2, axes=(-2, -1), norm="ortho")
    decoded = decoded.transpose(0, 1, 3, 2, 4).reshape(c, hb * 8, wb * 8)[:, :h, :w]
    return np.clip(decoded / 255.0 + 0.5, 0.0, 1.0)


@dataclass(frozen=True)
class DefenseSpec:
    kind: str
    param: int

    def __post_init__(self):
        if self.kind == "jpeg" and not (1 <= self.param <= 100):
            raise ValueError(f"JPEG quality must lie in [1, 100], got {self.param}")
        if self.kind == "bitdepth" and not (1 <= self.param <= 8):
            raise ValueError(f"bit depth must lie in [1, 8], got {self.param}")
        if self.kind in ("smooth", "meansmooth") and (self.param < 1 or self.param % 2 == 0):
            raise ValueError(f"smoothing window must be odd and >= 1, got {self.param}")
        if self.kind not in ("jpeg", "bitdepth", "smooth", "meansmooth"):
            raise ValueError(f"unknown defense {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "DefenseSpec":
        kind, sep, value = text.strip().partition(":")
        if not sep:
            raise ValueError(f"defense must look like 'kind:value', got {text!r}")
        try:
            param = int(value)
        except ValueError:
            raise ValueError(f"defense parameter must be an integer, got {value!r}") from None
        return cls(kind.lower(), param)

    def __str__(self):
        return f"{self.kind}:{self.param}"

    def apply(self, x) -> np.ndarray:
        if self.kind == "jpeg":
            return jpeg_like_compress(x, self.param)
        if self.kind == "bitdepth":
            return bit_depth_reduce(x, self.param)
        if self.kind == "smooth":
            return spatial_smooth(x, self.param, "median")
        return spatial_smooth(x, self.param, "mean")


class DefendedOracle(QueryOracle):
    """Transforms each image, then forwards it to ``base``.

    A call costs exactly one query per image on both this wrapper and the base
    oracle; the transform itself is free.
    """

    def __init__(self, base: QueryOracle, spec: DefenseSpec):
        super().__init__(base.model, base.input_shape, base.num_classes)
        self.base = base
        self.spec = spec

    def _evaluate(self, xs):
        transformed = np.stack([self.spec.apply(img) for img in xs])
        return self.base.predict_logits_batch(transformed)


def defended_oracle(oracle: QueryOracle, spec: DefenseSpec | str) -> DefendedOracle:
    if isinstance(spec, str):
        spec = DefenseSpec.parse(spec)
    return DefendedOracle(oracle, spec)
