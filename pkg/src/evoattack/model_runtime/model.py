from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..tensor_ops import ShapeMismatchError
from .architecture import BatchNorm, Conv, Dense, Dropout, MaxPool, ModelSpec, ReLU


class MalformedWeightsError(ValueError):
    pass


def expected_param_shapes(spec: ModelSpec) -> list[dict[str, tuple[int, ...]]]:
    """Parameter names and shapes each layer of ``spec`` requires."""
    shapes = spec.shapes()
    out = []
    for layer, in_shape in zip(spec.layers, shapes[:-1]):
        if isinstance(layer, Conv):
            out.append({
                "weight": (layer.out_channels, in_shape[0], layer.kernel, layer.kernel),
                "bias": (layer.out_channels,),
            })
        elif isinstance(layer, BatchNorm):
            c = (in_shape[0],)
            out.append({"gamma": c, "beta": c, "running_mean": c, "running_var": c})
        elif isinstance(layer, Dense):
            out.append({
                "weight": (layer.out_features, int(np.prod(in_shape))),
                "bias": (layer.out_features,),
            })
        else:
            out.append({})
    return out


def check_weights(spec: ModelSpec, weights) -> None:
    expected = expected_param_shapes(spec)
    if len(weights) != len(expected):
        raise MalformedWeightsError(f"{len(weights)} weight entries for {len(expected)} layers")
    for i, (want, got) in enumerate(zip(expected, weights)):
        if set(want) != set(got):
            raise MalformedWeightsError(f"layer {i}: expected parameters {sorted(want)}, got {sorted(got)}")
        for name, shape in want.items():
            arr = np.asarray(got[name])
            if arr.shape != shape:
                raise MalformedWeightsError(f"layer {i} {name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise MalformedWeightsError(f"layer {i} {name}: non-finite values")


def init_weights(spec: ModelSpec, rng: np.random.Generator, dtype=np.float32):
    """He-normal initialisation for conv/dense, identity batchnorm."""
    weights = []
    for layer, shapes in zip(spec.layers, expected_param_shapes(spec)):
        params = {}
        if isinstance(layer, (Conv, Dense)):
            w_shape = shapes["weight"]
            fan_in = int(np.prod(w_shape[1:]))
            params["weight"] = (rng.standard_normal(w_shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
            params["bias"] = np.zeros(shapes["bias"], dtype=dtype)
        elif isinstance(layer, BatchNorm):
            c = shapes["gamma"]
            params = {
                "gamma": np.ones(c, dtype=dtype),
                "beta": np.zeros(c, dtype=dtype),
                "running_mean": np.zeros(c, dtype=dtype),
                "running_var": np.ones(c, dtype=dtype),
            }
        weights.append(params)
    return weights


def _conv_nhwc(h, weight, bias, stride, padding):
    if padding:
        h = np.pad(h, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    k = weight.shape[2]
    win = sliding_window_view(h, (k, k), axis=(1, 2))[:, ::stride, ::stride]  # (B, Ho, Wo, C, k, k)
    b, ho, wo = win.shape[:3]
    cols = win.reshape(b * ho * wo, -1)
    out = cols @ weight.reshape(weight.shape[0], -1).T + bias
    return out.reshape(b, ho, wo, -1)


def _maxpool_nhwc(h, kernel, stride):
    b, height, width, c = h.shape
    ho = (height - kernel) // stride + 1
    wo = (width - kernel) // stride + 1
    if kernel == stride:
        cropped = h[:, :ho * kernel, :wo * kernel]
        return cropped.reshape(b, ho, kernel, wo, kernel, c).max(axis=(2, 4))
    win = sliding_window_view(h, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride]
    return win.max(axis=(4, 5))


def forward(spec: ModelSpec, weights, x, dtype=np.float64) -> np.ndarray:
    """Inference pass. ``x`` is one image (C, H, W) or a batch (B, C, H, W);
    returns float64 logits of shape (classes,) or (B, classes).

    Activations are kept channels-last internally, so each convolution is one
    matrix product over unfolded windows. Dense layers flatten in
    channel-major order.
    """
    x = np.asarray(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.shape[1:] != spec.input_shape:
        raise ShapeMismatchError(f"model expects input {spec.input_shape}, got {x.shape[1:]}")
    h = x.astype(dtype, copy=False).transpose(0, 2, 3, 1)
    for layer, params in zip(spec.layers, weights):
        if isinstance(layer, Conv):
            h = _conv_nhwc(h, params["weight"], params["bias"], layer.stride, layer.padding)
        elif isinstance(layer, BatchNorm):
            scale = params["gamma"] / np.sqrt(params["running_var"] + layer.eps)
            h = h * scale + (params["beta"] - params["running_mean"] * scale)
        elif isinstance(layer, ReLU):
            h = np.maximum(h, 0)
        elif isinstance(layer, MaxPool):
            h = _maxpool_nhwc(h, layer.kernel, layer.stride)
        elif isinstance(layer, Dense):
            if h.ndim == 4:
                h = h.transpose(0, 3, 1, 2)
            h = h.reshape(len(h), -1) @ params["weight"].T + params["bias"]
        elif isinstance(layer, Dropout):
            pass
    logits = np.asarray(h, dtype=np.float64)
    return logits[0] if single else logits


class Model:
    """A spec plus weights, callable on batches. Weights are cast once to the
    compute dtype."""

    def __init__(self, spec: ModelSpec, weights, dtype=np.float64):
        check_weights(spec, weights)
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.weights = [{k: np.asarray(v, dtype=self.dtype) for k, v in p.items()} for p in weights]

    @property
    def input_shape(self):
        return self.spec.input_shape

    @property
    def num_classes(self):
        return self.spec.num_classes

    def __call__(self, x):
        return forward(self.spec, self.weights, x, self.dtype)

    def accuracy(self, images, labels, batch_size=500) -> float:
        labels = np.asarray(labels)
        correct = 0
        for start in range(0, len(labels), batch_size):
            logits = self(images[start:start + batch_size])
            correct += int(np.sum(np.argmax(logits, axis=1) == labels[start:start + batch_size]))
        return correct / max(len(labels), 1)
