"""Polynomial convolution layer, auxiliary layers and degree-scaled initialization.

All layers work on batched arrays. Feature maps are ``(batch, channels,
samples)``; dense layers take ``(batch, features)``. Every layer exposes

* ``forward(a) -> (out, cache)``
* ``backward(cache, grad_out, preactivation=False, need_input_grad=True) -> (param_grads, grad_in)``

with ``param_grads`` aligned with ``params``. ``grad_in`` is ``None`` when
``need_input_grad`` is false (the first layer never needs it). Gradients are summed over the
batch axis; averaging is the loss function's job.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .activations import Activation, get_activation
from .tensor import ShapeError, maxpool2, maxpool2_backward, power_stack, repeat2, repeat2_backward, same_pad_widths, windows


def glorot_limit(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


@dataclass(frozen=True)
class InitSpec:
    """Glorot normalized uniform base law; degree-``d`` weights are divided by ``d!``."""

    seed: int = 0
    degree_scaling: bool = True

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


class Layer:
    kind = "layer"
    params: list[np.ndarray] = []

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params)

    def out_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def init(self, rng: np.random.Generator, degree_scaling: bool = True) -> None:
        pass


class PnnLayer(Layer):
    """One layer of polynomial neurons.

    Neuron ``i`` computes ``f(sum_d sum_j W[i, j, d] * Y_prev[j] ** (d + 1) + b[i])``
    where ``*`` is the valid sliding dot product. Degree 1 is a plain
    convolution layer.
    """

    kind = "pnn"

    def __init__(self, in_channels: int, out_channels: int, kernel_len: int, degree: int = 1,
                 activation: str | Activation = "tanh", padding: str = "valid"):
        if min(in_channels, out_channels, kernel_len, degree) < 1:
            raise ValueError("channels, kernel length and degree must all be >= 1")
        if padding not in ("valid", "same"):
            raise ValueError(f"padding must be 'valid' or 'same', got {padding!r}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_len = kernel_len
        self.degree = degree
        self.activation = get_activation(activation) if isinstance(activation, str) else activation
        self.padding = padding
        self.weights = np.zeros((out_channels, in_channels, degree, kernel_len))
        self.biases = np.zeros(out_channels)

    @property
    def params(self) -> list[np.ndarray]:
        return [self.weights, self.biases]

    def out_length(self, m: int) -> int:
        return m if self.padding == "same" else m - self.kernel_len + 1

    def out_shape(self, shape):
        n, m = shape
        if n != self.in_channels:
            raise ShapeError(f"layer expects {self.in_channels} channels, got {n}")
        if self.padding == "valid" and self.kernel_len > m:
            raise ShapeError(f"kernel length {self.kernel_len} exceeds input length {m}")
        return (self.out_channels, self.out_length(m))

    def init(self, rng, degree_scaling=True):
        fan_in = self.in_channels * self.kernel_len
        fan_out = self.out_channels * self.kernel_len
        limit = glorot_limit(fan_in, fan_out)
        w = rng.uniform(-limit, limit, size=self.weights.shape)
        if degree_scaling:
            w /= np.array([math.factorial(d) for d in range(1, self.degree + 1)])[None, None, :, None]
        self.weights[...] = w
        self.biases[...] = 0.0

    def _pad(self, y):
        if self.padding == "same":
            left, right = same_pad_widths(self.kernel_len)
            return np.pad(y, ((0, 0), (0, 0), (left, right)))
        return y

    def forward(self, y_prev):
        y_prev = np.asarray(y_prev, dtype=np.float64)
        if y_prev.ndim != 3 or y_prev.shape[1] != self.in_channels:
            raise ShapeError(f"expected (batch, {self.in_channels}, samples), got {y_prev.shape}")
        y_in = self._pad(y_prev)
        if self.kernel_len > y_in.shape[-1]:
            raise ShapeError(f"kernel length {self.kernel_len} exceeds input length {y_in.shape[-1]}")
        powers = power_stack(y_in, self.degree)  # (B, Nprev, D, Mp)
        win = windows(powers, self.kernel_len)  # (B, Nprev, D, Mout, K)
        x = np.tensordot(win, self.weights, axes=([1, 2, 4], [1, 2, 3]))  # (B, Mout, N)
        x = np.ascontiguousarray(x.transpose(0, 2, 1)) + self.biases[None, :, None]
        return self.activation(x), (y_in, powers, x)

    def backward(self, cache, grad_out, preactivation=False, need_input_grad=True):
        y_in, powers, x = cache
        dx = grad_out if preactivation else grad_out * self.activation.deriv(x)
        k = self.kernel_len
        dw = np.tensordot(dx, windows(powers, k), axes=([0, 2], [0, 3]))  # (N, Nprev, D, K)
        db = dx.sum(axis=(0, 2))
        if not need_input_grad:
            return [dw, db], None
        padded = np.pad(dx, ((0, 0), (0, 0), (k - 1, k - 1)))
        # full correlation with the tap-reversed kernel
        dp = np.tensordot(windows(padded, k), self.weights[..., ::-1], axes=([1, 3], [0, 3]))  # (B, Mp, Nprev, D)
        dp = dp.transpose(0, 2, 3, 1)
        dy = dp[:, :, 0, :].copy()
        for d in range(2, self.degree + 1):
            dy += d * dp[:, :, d - 1, :] * powers[:, :, d - 2, :]
        if self.padding == "same":
            left, right = same_pad_widths(k)
            dy = dy[:, :, left: dy.shape[-1] - right]
        return [dw, db], dy


class Conv1D(PnnLayer):
    """Plain 1-D convolution layer: a polynomial layer of degree 1."""

    kind = "conv"

    def __init__(self, in_channels, out_channels, kernel_len, activation="tanh", padding="valid"):
        super().__init__(in_channels, out_channels, kernel_len, 1, activation, padding)


class MaxPool2(Layer):
    kind = "maxpool2"
    params = []

    def out_shape(self, shape):
        n, m = shape
        if m < 2:
            raise ShapeError("maxpool2 needs at least 2 samples")
        return (n, m // 2)

    def forward(self, a):
        out, arg = maxpool2(a)
        return out, (arg, a.shape[-1])

    def backward(self, cache, grad_out, preactivation=False, need_input_grad=True):
        arg, length = cache
        return [], maxpool2_backward(grad_out, arg, length)


class UpSample2(Layer):
    kind = "upsample2"
    params = []

    def out_shape(self, shape):
        n, m = shape
        return (n, 2 * m)

    def forward(self, a):
        return repeat2(a), None

    def backward(self, cache, grad_out, preactivation=False, need_input_grad=True):
        return [], repeat2_backward(grad_out)


class Flatten(Layer):
    kind = "flatten"
    params = []

    def out_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, a):
        return a.reshape(a.shape[0], -1), a.shape

    def backward(self, cache, grad_out, preactivation=False, need_input_grad=True):
        return [], grad_out.reshape(cache)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, units: int, activation: str | Activation = "relu"):
        self.in_features = in_features
        self.units = units
        self.activation = get_activation(activation) if isinstance(activation, str) else activation
        self.weights = np.zeros((units, in_features))
        self.biases = np.zeros(units)

    @property
    def params(self):
        return [self.weights, self.biases]

    def out_shape(self, shape):
        if shape != (self.in_features,):
            raise ShapeError(f"dense layer expects ({self.in_features},), got {shape}")
        return (self.units,)

    def init(self, rng, degree_scaling=True):
        limit = glorot_limit(self.in_features, self.units)
        self.weights[...] = rng.uniform(-limit, limit, size=self.weights.shape)
        self.biases[...] = 0.0

    def forward(self, a):
        x = a @ self.weights.T + self.biases
        return self.activation(x), (a, x)

    def backward(self, cache, grad_out, preactivation=False, need_input_grad=True):
        a, x = cache
        dx = grad_out if preactivation else grad_out * self.activation.deriv(x)
        return [dx.T @ a, dx.sum(axis=0)], (dx @ self.weights if need_input_grad else None)


def init_layer(spec: InitSpec, layer: Layer) -> Layer:
    """Initialize ``layer`` in place from ``spec`` and return it."""
    layer.init(spec.rng(), spec.degree_scaling)
    return layer


def _batched(y):
    y = np.asarray(y, dtype=np.float64)
    return (y[None], True) if y.ndim == 2 else (y, False)


def pnn_forward(layer: PnnLayer, y_prev):
    """Single-sample or batched forward pass returning ``(X, Y, cache)``."""
    y_prev, single = _batched(y_prev)
    y, cache = layer.forward(y_prev)
    x = cache[2]
    if single:
        return x[0], y[0], cache
    return x, y, cache


def pnn_backward(layer: PnnLayer, cache, grad_y):
    """Returns ``(dW, db, dE/dY_prev)`` for the batch stored in ``cache``."""
    grad_y, single = _batched(grad_y)
    (dw, db), dy_prev = layer.backward(cache, grad_y)
    return dw, db, (dy_prev[0] if single else dy_prev)
