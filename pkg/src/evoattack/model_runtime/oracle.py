"""The black-box view of a classifier: images in, raw logits out, every
evaluation counted."""

from __future__ import annotations

import threading

import numpy as np

from ..tensor_ops import ShapeMismatchError


class QueryOracle:
    """Wraps any callable mapping a batch ``(B, C, H, W)`` to logits ``(B, classes)``.

    One image evaluated is one query, whether it arrives alone or in a batch.
    The counter is guarded by a lock so concurrent callers never lose an
    increment.
    """

    def __init__(self, model, input_shape=None, num_classes=None):
        self.model = model
        self.input_shape = tuple(input_shape if input_shape is not None else model.input_shape)
        self.num_classes = num_classes if num_classes is not None else getattr(model, "num_classes", None)
        self._count = 0
        self._lock = threading.Lock()

    @property
    def query_count(self) -> int:
        return self._count

    def _charge(self, n: int) -> None:
        with self._lock:
            self._count += n

    def predict_logits(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.input_shape:
            raise ShapeMismatchError(f"oracle expects {self.input_shape}, got {x.shape}")
        self._charge(1)
        return self._evaluate(x[None])[0]

    def predict_logits_batch(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim != 4 or xs.shape[1:] != self.input_shape:
            raise ShapeMismatchError(f"oracle expects batches of {self.input_shape}, got {xs.shape}")
        if len(xs) == 0:
            return np.zeros((0, self.num_classes or 0))
        self._charge(len(xs))
        return self._evaluate(xs)

    def _evaluate(self, xs) -> np.ndarray:
        logits = np.asarray(self.model(xs), dtype=np.float64)
        if logits.ndim != 2 or logits.shape[0] != len(xs) or logits.shape[1] < 2:
            raise ValueError(f"model returned logits of shape {logits.shape} for {len(xs)} inputs")
        if not np.all(np.isfinite(logits)):
            raise ValueError("model returned non-finite logits")
        return logits


def predict_label(logits) -> int:
    """Index of the largest logit; ties go to the lowest index."""
    logits = np.asarray(logits)
    if logits.size == 0:
        raise ValueError("empty logit vector")
    return int(np.argmax(logits))
