"""Dense-tensor primitives with explicit backward rules.

Forward functions route through the selected kernel backend where one
exists; every backward is a hand-derived reverse-mode rule over the
cached forward values. There is no tape: callers compose backwards in
reverse order themselves, which is workable because the model graph is
static.

All arithmetic is float64. Matrix products are numpy `@` (BLAS); the
loop order inside a given build is fixed, so repeated runs of the same
binary reproduce results bit-for-bit.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .params import DimensionError, NumericError, check_finite


# ---------------------------------------------------------------- matmul

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def matmul_backward(g: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Returns (dA, dB) for y = a @ b."""
    return g @ b.T, a.T @ g


# ---------------------------------------------------------------- linear

def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    y = matmul(x, w)
    if b is not None:
        y = y + b
    return y


def linear_backward(g: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Returns (dx, dw, db) for y = x @ w + b."""
    dx, dw = matmul_backward(g, x, w)
    return dx, dw, g.sum(axis=tuple(range(g.ndim - 1)))


# --------------------------------------------------------------- softmax

def softmax_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    check_finite(x, "softmax input")
    return kernels.softmax_rows(x)


def softmax_rows_backward(g: np.ndarray, y: np.ndarray) -> np.ndarray:
    """dx given dy and the forward output y."""
    return y * (g - (g * y).sum(axis=-1, keepdims=True))


# --------------------------------------------------------------- rmsnorm

def rms_norm(x: np.ndarray, gain: np.ndarray, eps: float):
    """Returns (y, cache). y = x * inv_rms(row) * gain."""
    x = np.asarray(x, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    y, inv_rms = kernels.rms_norm(x, gain, eps)
    return y, (x, gain, inv_rms)


def rms_norm_backward(g: np.ndarray, cache):
    x, gain, inv_rms = cache
    d = x.shape[-1]
    gw = g * gain
    dgain = (g * x * inv_rms).sum(axis=tuple(range(g.ndim - 1)))
    # d inv_rms/dx_j = -x_j * inv_rms^3 / d
    row_dot = (gw * x).sum(axis=-1, keepdims=True)
    dx = gw * inv_rms - x * (inv_rms**3 / d) * row_dot
    return dx, dgain


# ----------------------------------------------------------- activations

def sigmoid(x: np.ndarray) -> np.ndarray:
    return kernels.sigmoid(np.asarray(x, dtype=np.float64))


def sigmoid_backward(g: np.ndarray, y: np.ndarray) -> np.ndarray:
    return g * y * (1.0 - y)


def silu(x: np.ndarray) -> np.ndarray:
    return kernels.silu(np.asarray(x, dtype=np.float64))


def silu_backward(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    s = kernels.sigmoid(x)
    return g * s * (1.0 + x * (1.0 - s))


def softplus(x: np.ndarray) -> np.ndarray:
    return kernels.softplus(np.asarray(x, dtype=np.float64))


def softplus_backward(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    return g * kernels.sigmoid(x)


# ------------------------------------------------------------------ conv

def depthwise_conv1d(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if x.ndim != 2 or kernel.ndim != 2 or x.shape[1] != kernel.shape[1]:
        raise DimensionError(
            f"depthwise_conv1d expects [n,d] x [w,d], got {x.shape} x {kernel.shape}"
        )
    return kernels.depthwise_conv1d(x, kernel)


def depthwise_conv1d_backward(g: np.ndarray, x: np.ndarray, kernel: np.ndarray):
    """Returns (dx, dkernel) for the causal per-channel conv."""
    n = x.shape[0]
    w = kernel.shape[0]
    dx = np.zeros_like(x)
    dk = np.zeros_like(kernel)
    for j in range(w):
        shift = w - 1 - j
        if shift == 0:
            dx += kernel[j] * g
            dk[j] = (g * x).sum(axis=0)
        else:
            dx[:-shift] += kernel[j] * g[shift:]
            dk[j] = (g[shift:] * x[:-shift]).sum(axis=0)
    return dx, dk


# ------------------------------------------------------------- small ops

def mean_rows(x: np.ndarray) -> np.ndarray:
    """Mean over axis 0."""
    return x.mean(axis=0)


def mean_rows_backward(g: np.ndarray, n: int) -> np.ndarray:
    return np.broadcast_to(g / n, (n,) + g.shape).copy()


def log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max()
    return shifted - np.log(np.exp(shifted).sum())
