"""Layer objects built on :mod:`binloc.nn.functional`."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import functional as F

LAYER_KINDS = (
    "conv1d", "conv2d", "maxpool1d", "maxpool2d", "dense",
    "relu", "tanh", "softmax", "flatten", "concat",
)


class ShapeError(ValueError):
    """An input shape is incompatible with a layer."""


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer.

    ``size`` holds the kernel or pool extents; ``channels`` the output
    channel count (convs) or unit count (dense).
    """

    kind: str
    size: tuple = ()
    channels: int | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if any(s < 1 for s in self.size):
            raise ValueError(f"{self.kind} extents must be >= 1, got {self.size}")
        if self.channels is not None and self.channels < 1:
            raise ValueError(f"{self.kind} channel count must be >= 1, got {self.channels}")

    def __str__(self):
        extent = "x".join(str(s) for s in self.size)
        parts = [self.kind] + ([extent] if extent else []) + (
            [f"{self.channels}ch"] if self.channels else [])
        return " ".join(parts)

    def output_shape(self, shape: tuple) -> tuple:
        """Per-example output shape; raises :class:`ShapeError` if invalid."""
        k = self.kind
        shape = tuple(shape)
        if k == "conv1d":
            self._expect(shape, 2)
            out = (self.channels, shape[1] - self.size[0] + 1)
        elif k == "conv2d":
            self._expect(shape, 3)
            out = (self.channels, shape[1] - self.size[0] + 1, shape[2] - self.size[1] + 1)
        elif k == "maxpool1d":
            self._expect(shape, 2)
            out = (shape[0], shape[1] // self.size[0])
        elif k == "maxpool2d":
            self._expect(shape, 3)
            out = (shape[0], shape[1] // self.size[0], shape[2] // self.size[1])
        elif k == "dense":
            self._expect(shape, 1)
            out = (self.channels,)
        elif k == "flatten":
            out = (math.prod(shape),)
        else:
            out = shape
        if any(d < 1 for d in out):
            raise ShapeError(f"{self} maps input {shape} to non-positive extent {out}")
        return out

    def _expect(self, shape, ndim):
        if len(shape) != ndim:
            raise ShapeError(f"{self} expects a {ndim}-D per-example input, got {shape}")


class Parameter:
    """Trainable array with an accumulated gradient."""

    def __init__(self, value: np.ndarray, name: str = ""):
        self.value = value
        self.grad = np.zeros_like(value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        self.grad[...] = 0


class Layer:
    spec: LayerSpec
    need_dx = True

    def parameters(self) -> list[Parameter]:
        return []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Conv1d(Layer):
    def __init__(self, spec, w, b):
        self.spec, self.w, self.b = spec, Parameter(w, "w"), Parameter(b, "b")

    def parameters(self):
        return [self.w, self.b]

    def forward(self, x):
        y, self._cache = F.conv1d_forward(x, self.w.value, self.b.value)
        return y

    def backward(self, dy):
        dx, dw, db = F.conv1d_backward(self._cache, dy, self.need_dx)
        self.w.grad += dw
        self.b.grad += db
        self._cache = None
        return dx


class Conv2d(Conv1d):
    def forward(self, x):
        y, self._cache = F.conv2d_forward(x, self.w.value, self.b.value)
        return y

    def backward(self, dy):
        dx, dw, db = F.conv2d_backward(self._cache, dy, self.need_dx)
        self.w.grad += dw
        self.b.grad += db
        self._cache = None
        return dx


class Dense(Conv1d):
    def forward(self, x):
        y, self._cache = F.dense_forward(x, self.w.value, self.b.value)
        return y

    def backward(self, dy):
        dx, dw, db = F.dense_backward(self._cache, dy, self.need_dx)
        self.w.grad += dw
        self.b.grad += db
        self._cache = None
        return dx


class _Stateless(Layer):
    _fwd = _bwd = None

    def __init__(self, spec):
        self.spec = spec

    def forward(self, x):
        y, self._cache = type(self)._fwd(x)
        return y

    def backward(self, dy):
        dx = type(self)._bwd(self._cache, dy)
        self._cache = None
        return dx


class ReLU(_Stateless):
    _fwd, _bwd = F.relu_forward, F.relu_backward


class Tanh(_Stateless):
    _fwd, _bwd = F.tanh_forward, F.tanh_backward


class Softmax(_Stateless):
    _fwd, _bwd = F.softmax_forward, F.softmax_backward


class Flatten(_Stateless):
    _fwd, _bwd = F.flatten_forward, F.flatten_backward


class MaxPool1d(Layer):
    def __init__(self, spec):
        self.spec = spec

    def forward(self, x):
        y, self._cache = F.maxpool1d_forward(x, self.spec.size[0])
        return y

    def backward(self, dy):
        dx = F.maxpool1d_backward(self._cache, dy)
        self._cache = None
        return dx


class MaxPool2d(MaxPool1d):
    def forward(self, x):
        y, self._cache = F.maxpool2d_forward(x, tuple(self.spec.size))
        return y

    def backward(self, dy):
        dx = F.maxpool2d_backward(self._cache, dy)
        self._cache = None
        return dx


def _init_bound(init: str, fan_in: int, fan_out: int) -> float:
    if init == "kaiming":
        return math.sqrt(6.0 / fan_in)
    if init == "xavier":
        return math.sqrt(6.0 / (fan_in + fan_out))
    raise ValueError(f"unknown init scheme {init!r}")


def make_layer(spec: LayerSpec, in_shape: tuple, rng: np.random.Generator,
               init: str = "xavier", dtype=np.float32) -> Layer:
    """Instantiate ``spec`` for per-example input ``in_shape``.

    Weights are drawn uniformly in ``[-bound, bound]`` (Kaiming or Xavier
    bound); biases start at zero.
    """
    spec.output_shape(in_shape)
    k = spec.kind
    if k in ("conv1d", "conv2d", "dense"):
        c_in = in_shape[0]
        if k == "dense":
            wshape = (c_in, spec.channels)
            fan_in, fan_out = c_in, spec.channels
        else:
            wshape = (spec.channels, c_in) + tuple(spec.size)
            rf = math.prod(spec.size)
            fan_in, fan_out = c_in * rf, spec.channels * rf
        bound = _init_bound(init, fan_in, fan_out)
        w = rng.uniform(-bound, bound, size=wshape).astype(dtype)
        b = np.zeros(spec.channels, dtype=dtype)
        return {"conv1d": Conv1d, "conv2d": Conv2d, "dense": Dense}[k](spec, w, b)
    cls = {"maxpool1d": MaxPool1d, "maxpool2d": MaxPool2d, "relu": ReLU, "tanh": Tanh,
           "softmax": Softmax, "flatten": Flatten}.get(k)
    if cls is None:
        raise ValueError(f"{k} is not a sequential layer")
    return cls(spec)


class Sequential:
    """Chain of layers with a fixed per-example input shape."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers

    @classmethod
    def from_specs(cls, specs, in_shape, rng, dtype=np.float32) -> "Sequential":
        layers = []
        shape = tuple(in_shape)
        for i, spec in enumerate(specs):
            nxt = specs[i + 1].kind if i + 1 < len(specs) else None
            init = "kaiming" if nxt == "relu" else "xavier"
            layers.append(make_layer(spec, shape, rng, init, dtype))
            shape = spec.output_shape(shape)
        return cls(layers)

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
            if not np.all(np.isfinite(x)):
                raise FloatingPointError(f"non-finite output from layer {layer.spec}")
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
            if dy is None:
                break
        return dy

    def set_input_grad(self, flag: bool):
        """Whether the first layer should compute a gradient for its input."""
        if self.layers:
            self.layers[0].need_dx = flag
