"""Minibatch trainer for desk-scale victim models.

Backpropagation is written out per layer in ``ops``; nothing here is needed at
attack time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import ops
from .architecture import BatchNorm, Conv, Dense, Dropout, MaxPool, ModelSpec, ReLU
from .dataset import Dataset
from .model import init_weights

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 64
    optimizer: str = "adam"  # or "sgd" (momentum)
    learning_rate: float = 1e-3
    weight_decay: float = 1e-6
    momentum: float = 0.9
    bn_momentum: float = 0.1
    seed: int = 0
    dtype: str = "float32"


_TRAINABLE = {Conv: ("weight", "bias"), Dense: ("weight", "bias"), BatchNorm: ("gamma", "beta")}


def loss_and_grads(spec: ModelSpec, weights, x, y, rng=None, dropout=True):
    """Training-mode forward and backward pass.

    Batchnorm normalises with batch statistics. Dropout is active only when
    ``rng`` is given and ``dropout`` is true. Returns ``(loss, grads,
    batch_stats)`` where ``batch_stats[i]`` holds the (mean, var) seen by
    batchnorm layer ``i``.
    """
    caches = []
    batch_stats = {}
    h = x
    for i, (layer, p) in enumerate(zip(spec.layers, weights)):
        if isinstance(layer, Conv):
            h, cache = ops.conv2d_forward(h, p["weight"], p["bias"], layer.stride, layer.padding)
        elif isinstance(layer, BatchNorm):
            h, cache = ops.batchnorm_train_forward(h, p["gamma"], p["beta"], layer.eps)
            batch_stats[i] = (cache[2], cache[3])
        elif isinstance(layer, ReLU):
            cache = h > 0
            h = h * cache
        elif isinstance(layer, MaxPool):
            h, cache = ops.maxpool_forward(h, layer.kernel, layer.stride)
        elif isinstance(layer, Dropout):
            if rng is not None and dropout and layer.rate > 0:
                keep = 1.0 - layer.rate
                cache = (rng.random(h.shape) < keep).astype(h.dtype) / keep
                h = h * cache
            else:
                cache = None
        elif isinstance(layer, Dense):
            h, cache = ops.dense_forward(h, p["weight"], p["bias"])
        caches.append(cache)

    loss, grad = ops.softmax_cross_entropy(h, y)
    grads = [dict() for _ in spec.layers]
    for i in range(len(spec.layers) - 1, -1, -1):
        layer, p, cache = spec.layers[i], weights[i], caches[i]
        if isinstance(layer, Conv):
            grad, dw, db = ops.conv2d_backward(grad, p["weight"], layer.stride, layer.padding, cache)
            grads[i] = {"weight": dw, "bias": db}
        elif isinstance(layer, BatchNorm):
            grad, dg, dbeta = ops.batchnorm_backward(grad, p["gamma"], cache)
            grads[i] = {"gamma": dg, "beta": dbeta}
        elif isinstance(layer, ReLU):
            grad = grad * cache
        elif isinstance(layer, MaxPool):
            grad = ops.maxpool_backward(grad, layer.kernel, layer.stride, cache)
        elif isinstance(layer, Dropout):
            if cache is not None:
                grad = grad * cache
        elif isinstance(layer, Dense):
            grad, dw, db = ops.dense_backward(grad, p["weight"], cache)
            grads[i] = {"weight": dw, "bias": db}
    return loss, grads, batch_stats


class _Adam:
    def __init__(self, lr, weight_decay, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.wd, self.b1, self.b2, self.eps = lr, weight_decay, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params, grads):
        self.t += 1
        for key, g in grads.items():
            p = params[key]
            g = g + self.wd * p
            m = self.m.get(key, 0.0) * self.b1 + (1 - self.b1) * g
            v = self.v.get(key, 0.0) * self.b2 + (1 - self.b2) * g * g
            self.m[key], self.v[key] = m, v
            m_hat = m / (1 - self.b1 ** self.t)
            v_hat = v / (1 - self.b2 ** self.t)
            p -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype)


class _SGD:
    def __init__(self, lr, weight_decay, momentum):
        self.lr, self.wd, self.mu = lr, weight_decay, momentum
        self.buf = {}

    def step(self, params, grads):
        for key, g in grads.items():
            p = params[key]
            g = g + self.wd * p
            b = self.buf.get(key, 0.0) * self.mu + g
            self.buf[key] = b
            p -= (self.lr * b).astype(p.dtype)


def train_fixture(spec: ModelSpec, train: Dataset, hyper: TrainConfig | None = None):
    """Train ``spec`` on ``train`` and return float32 weights.

    Deterministic for a fixed ``hyper.seed`` on a given machine.
    """
    hyper = hyper or TrainConfig()
    if len(train) == 0:
        raise ValueError("cannot train on an empty dataset")
    if train.images.shape[1:] != spec.input_shape:
        raise ValueError(f"dataset images {train.images.shape[1:]} do not match model input {spec.input_shape}")
    dtype = np.dtype(hyper.dtype)
    rng = np.random.default_rng(hyper.seed)
    weights = init_weights(spec, rng, dtype=dtype)
    if hyper.optimizer == "adam":
        opt = _Adam(hyper.learning_rate, hyper.weight_decay)
    elif hyper.optimizer == "sgd":
        opt = _SGD(hyper.learning_rate, hyper.weight_decay, hyper.momentum)
    else:
        raise ValueError(f"unknown optimizer {hyper.optimizer!r}")

    # flat views so the optimiser state is keyed by (layer, name)
    params = {}
    for i, (layer, p) in enumerate(zip(spec.layers, weights)):
        for name in _TRAINABLE.get(type(layer), ()):
            params[(i, name)] = p[name]

    shapes = spec.shapes()
    # elements per channel per sample seen by each batchnorm layer
    bn_spatial = {
        i: int(np.prod(shapes[i][1:])) if len(shapes[i]) == 3 else 1
        for i, layer in enumerate(spec.layers) if isinstance(layer, BatchNorm)
    }

    n = len(train)
    images = train.images.astype(dtype)
    labels = train.labels
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            if len(idx) < 2:
                continue  # batchnorm needs more than one sample
            loss, grads, stats = loss_and_grads(spec, weights, images[idx], labels[idx], rng)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss {loss} at epoch {epoch}, batch {batches}")
            flat = {(i, name): g.astype(dtype, copy=False) for i, gd in enumerate(grads) for name, g in gd.items()}
            opt.step(params, flat)
            m = hyper.bn_momentum
            for i, (mean, var) in stats.items():
                count = len(idx) * bn_spatial[i]
                unbiased = var * count / max(count - 1, 1)
                weights[i]["running_mean"] *= 1 - m
                weights[i]["running_mean"] += (m * mean).astype(dtype)
                weights[i]["running_var"] *= 1 - m
                weights[i]["running_var"] += (m * unbiased).astype(dtype)
            total += loss
            batches += 1
        log.info("epoch %d/%d mean loss %.4f", epoch + 1, hyper.epochs, total / max(batches, 1))
    for p in weights:
        for arr in p.values():
            if not np.all(np.isfinite(arr)):
                raise TrainingDivergedError("training produced non-finite weights")
    return [{k: v.astype(np.float32) for k, v in p.items()} for p in weights]

