"""Image tensors, distances and the feasible-set projection.

An image is a float64 numpy array of shape ``(channels, height, width)`` with
values in [0, 1]. Flattening in C order gives the channel-major layout used by
crossover and by every file format in this package.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np


class ShapeMismatchError(ValueError):
    pass


def as_image(data, shape: tuple[int, int, int] | None = None) -> np.ndarray:
    """Validate ``data`` as an image and return it as a float64 array.

    ``shape`` reshapes a flat channel-major buffer; without it ``data`` must
    already be 3-D.
    """
    arr = np.asarray(data, dtype=np.float64)
    if shape is not None:
        if arr.size != int(np.prod(shape)):
            raise ShapeMismatchError(f"{arr.size} values cannot form an image of shape {shape}")
        arr = arr.reshape(shape)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ShapeMismatchError(f"expected (channels, height, width), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return arr


def parse_eps(value) -> float:
    """Accept ``"k/255"``, a decimal string, or a number; return a float in [0, 1]."""
    if isinstance(value, str):
        text = value.strip()
        eps = float(Fraction(text)) if "/" in text else float(text)
    else:
        eps = float(value)
    if not (0.0 <= eps <= 1.0):
        raise ValueError(f"epsilon must lie in [0, 1], got {value!r}")
    return eps


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")


def linf_dist(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)))


def l2_dist(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    return float(np.linalg.norm((a - b).ravel()))


def project_feasible(cand, origin, eps: float) -> np.ndarray:
    """Clamp ``cand`` into the L-inf ball of radius ``eps`` around ``origin``,
    then into the [0, 1] box."""
    cand = np.asarray(cand, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    _check_shapes(cand, origin)
    out = np.clip(cand, origin - eps, origin + eps)
    np.clip(out, 0.0, 1.0, out=out)
    return out
