"""Dense numeric primitives shared by the loss, model and optimizer code.

Every reduction here runs in ascending index order so that results are
bit-identical across runs and thread counts. Inputs are plain 2-D numpy
arrays; float64 is used for tests and oracles, float32 is fine for training.
"""
from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_matrix(m, dtype=None) -> np.ndarray:
    a = np.asarray(m, dtype=dtype)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a fixed, ascending accumulation order.

    ``out[i, j] = (((a[i,0] b[0,j]) + a[i,1] b[1,j]) + ...)``, i.e. exactly the
    order of a naive triple loop. This is slower than BLAS but reproducible.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    dtype = np.result_type(a, b)
    out = np.zeros((a.shape[0], b.shape[1]), dtype=dtype)
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def ordered_sum(v) -> float:
    """Left-to-right sum of all entries (row-major)."""
    flat = np.asarray(v).ravel()
    if flat.size == 0:
        return flat.dtype.type(0)
    return np.cumsum(flat)[-1]


def row_norms(m: np.ndarray) -> np.ndarray:
    m = as_matrix(m)
    sq = m * m
    acc = np.zeros(m.shape[0], dtype=m.dtype)
    for k in range(m.shape[1]):
        acc += sq[:, k]
    return np.sqrt(acc)


def l2_normalize_rows(m: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Divide each row by ``max(||row||, eps)``; zero rows stay zero."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    m = as_matrix(m)
    norms = np.maximum(row_norms(m), eps)
    return m / norms[:, None]


def log_sigmoid(x):
    """Stable ``log(1 / (1 + exp(-x)))``; works on scalars and arrays."""
    x = np.asarray(x)
    out = np.minimum(x, 0) - np.log1p(np.exp(-np.abs(x)))
    return out[()] if out.ndim == 0 else out


def sigmoid(x):
    return expit(x)


def logsumexp(v) -> float:
    v = np.asarray(v).ravel()
    if v.size == 0:
        raise ShapeError("logsumexp of an empty vector")
    m = v.max()
    return m + np.log(ordered_sum(np.exp(v - m)))


def finite_diff_grad(f: Callable[[np.ndarray], float], at, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(at, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        fp = float(f(x))
        flat[idx] = orig - h
        fm = float(f(x))
        flat[idx] = orig
        gflat[idx] = (fp - fm) / (2 * h)
    return grad


def max_rel_error(analytic, numeric, floor: float = 1e-12) -> float:
    """Largest absolute deviation, relative to the larger of the two maxima.

    Entry-wise relative error is meaningless for entries whose true value is
    near zero, so the deviation is scaled by the gradient's overall magnitude.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    return float(np.abs(a - n).max(initial=0.0) / scale)
