"""Activation functions and their derivatives with respect to the pre-activation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _sigmoid_deriv(x):
    s = _sigmoid(x)
    return s * (1.0 - s)


def _swish(x):
    return x * _sigmoid(x)


def _swish_deriv(x):
    s = _sigmoid(x)
    return s + x * s * (1.0 - s)


def _softsign(x):
    return x / (1.0 + np.abs(x))


def _softsign_deriv(x):
    return 1.0 / (1.0 + np.abs(x)) ** 2


def _tanh_deriv(x):
    t = np.tanh(x)
    return 1.0 - t * t


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_deriv(x):
    return (x > 0).astype(np.float64)


def softmax(x):
    """Softmax over the last axis."""
    z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_deriv(x):
    raise NotImplementedError("softmax is differentiated jointly with categorical cross-entropy")


@dataclass(frozen=True)
class Activation:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=np.float64))


ACTIVATIONS = {
    "tanh": Activation("tanh", np.tanh, _tanh_deriv),
    "softsign": Activation("softsign", _softsign, _softsign_deriv),
    "relu": Activation("relu", _relu, _relu_deriv),
    "swish": Activation("swish", _swish, _swish_deriv),
    "sigmoid": Activation("sigmoid", _sigmoid, _sigmoid_deriv),
    "softmax": Activation("softmax", softmax, _softmax_deriv),
    "identity": Activation("identity", lambda x: x, lambda x: np.ones_like(x)),
}


def get_activation(name: str) -> Activation:
    try:
        return ACTIVATIONS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None
