"""Small dense linear-algebra helpers over float64 numpy arrays.

Vectors are 1-D arrays, matrices are 2-D C-contiguous (row-major) arrays.
Every function returns a freshly allocated array.
"""

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


def vector(values) -> np.ndarray:
    v = np.array(values, dtype=DTYPE)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def matrix(values) -> np.ndarray:
    m = np.array(values, dtype=DTYPE, order="C")
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    return m


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=DTYPE)


def zeros(rows: int, cols: int) -> np.ndarray:
    return np.zeros((rows, cols), dtype=DTYPE)


def matvec(m, v) -> np.ndarray:
    m = np.asarray(m, dtype=DTYPE)
    v = np.asarray(v, dtype=DTYPE)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec: matrix {m.shape} incompatible with vector {v.shape}")
    return m @ v


def concat(a, b) -> np.ndarray:
    return np.concatenate([np.asarray(a, dtype=DTYPE).ravel(), np.asarray(b, dtype=DTYPE).ravel()])


_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(op: str, a, b) -> np.ndarray:
    """Apply ``add``, ``sub``, ``mul`` (vector, vector) or ``scale`` (vector, scalar)."""
    a = np.asarray(a, dtype=DTYPE)
    if op == "scale":
        if np.ndim(b) != 0:
            raise ShapeError("scale expects a scalar right operand")
        return a * DTYPE(b)
    if op not in _OPS:
        raise ValueError(f"unknown elementwise op {op!r}")
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    return _OPS[op](a, b)
