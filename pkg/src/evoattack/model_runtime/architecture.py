"""Layer descriptions and shape inference for the small image classifiers used
as attack victims."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class BatchNorm:
    eps: float = 1e-5


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    kernel: int = 2
    stride: int = 2


@dataclass(frozen=True)
class Dropout:
    rate: float = 0.5


@dataclass(frozen=True)
class Dense:
    out_features: int


Layer = Union[Conv, BatchNorm, ReLU, MaxPool, Dropout, Dense]


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple[int, int, int]
    num_classes: int
    layers: tuple[Layer, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.num_classes < 2:
            raise SpecError("a classifier needs at least two classes")
        shapes = self.shapes()
        if shapes[-1] != (self.num_classes,):
            raise SpecError(f"final layer produces {shapes[-1]}, expected ({self.num_classes},)")

    def shapes(self) -> list[tuple[int, ...]]:
        """Activation shape before the first layer and after each layer."""
        shape: tuple[int, ...] = self.input_shape
        if len(shape) != 3 or min(shape) < 1:
            raise SpecError(f"input shape must be (channels, height, width), got {shape}")
        out = [shape]
        for i, layer in enumerate(self.layers):
            shape = _next_shape(shape, layer, i)
            out.append(shape)
        return out


def _next_shape(shape, layer, index):
    if isinstance(layer, Conv):
        if len(shape) != 3:
            raise SpecError(f"layer {index}: convolution needs a 3-D input, got {shape}")
        c, h, w = shape
        ho = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
        wo = (w + 2 * layer.padding - layer.kernel) // layer.stride + 1
        if layer.kernel < 1 or layer.stride < 1 or ho < 1 or wo < 1:
            raise SpecError(f"layer {index}: convolution does not fit input {shape}")
        return (layer.out_channels, ho, wo)
    if isinstance(layer, MaxPool):
        if len(shape) != 3:
            raise SpecError(f"layer {index}: max pooling needs a 3-D input, got {shape}")
        c, h, w = shape
        ho = (h - layer.kernel) // layer.stride + 1
        wo = (w - layer.kernel) // layer.stride + 1
        if ho < 1 or wo < 1:
            raise SpecError(f"layer {index}: pooling window does not fit input {shape}")
        return (c, ho, wo)
    if isinstance(layer, Dense):
        # dense layers flatten whatever arrives
        return (layer.out_features,)
    if isinstance(layer, (BatchNorm, ReLU, Dropout)):
        return shape
    raise SpecError(f"layer {index}: unknown layer type {type(layer).__name__}")


def table2_cnn(widths=(32, 64, 128), hidden=128, input_shape=(1, 28, 28), num_classes=10) -> ModelSpec:
    """Three conv blocks (conv 3x3 + batchnorm + relu, each followed by 2x2 max
    pooling), dropout, then two dense layers. ``widths`` may be shrunk for
    desk-scale fixtures."""
    layers: list[Layer] = []
    for width in widths:
        layers += [Conv(width, 3, 1, 1), BatchNorm(), ReLU(), MaxPool(2, 2)]
    layers += [Dropout(0.5), Dense(hidden), ReLU(), Dense(num_classes)]
    return ModelSpec(tuple(input_shape), num_classes, tuple(layers))


def dense_net(hidden=(256,), input_shape=(1, 28, 28), num_classes=10) -> ModelSpec:
    layers: list[Layer] = []
    for width in hidden:
        layers += [Dense(width), ReLU()]
    layers.append(Dense(num_classes))
    return ModelSpec(tuple(input_shape), num_classes, tuple(layers))
