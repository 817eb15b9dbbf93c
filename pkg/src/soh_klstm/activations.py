"""Sigmoid, tanh and SiLU with their derivatives (pointwise, any array shape)."""

import numpy as np


def sigmoid(x):
    # branch on sign so exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x):
    return np.tanh(np.asarray(x, dtype=np.float64))


def silu(x):
    x = np.asarray(x, dtype=np.float64)
    return x * sigmoid(x)


def sigmoid_grad(x):
    s = sigmoid(x)
    return s * (1.0 - s)


def tanh_grad(x):
    t = np.tanh(np.asarray(x, dtype=np.float64))
    return 1.0 - t * t


def silu_grad(x):
    x = np.asarray(x, dtype=np.float64)
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


_TABLE = {
    "sigmoid": (sigmoid, sigmoid_grad),
    "tanh": (tanh, tanh_grad),
    "silu": (silu, silu_grad),
}

KINDS = tuple(_TABLE)


def _lookup(kind):
    try:
        return _TABLE[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {KINDS}") from None


def apply(kind: str, x):
    return _lookup(kind)[0](x)


def derivative(kind: str, x):
    return _lookup(kind)[1](x)
