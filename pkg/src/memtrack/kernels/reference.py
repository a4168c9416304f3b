"""Reference numpy kernels.

These are the semantic ground truth for the compiled extension: every
kernel in `_fast.pyx` must match these within float rounding (the parity
suite pins 1e-12 relative). They are also the import-time fallback when
the extension is unavailable, and the only implementation used by the
backward passes.

All kernels take and return float64 arrays and never mutate inputs.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by row-max subtraction."""
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def rms_norm(x: np.ndarray, gain: np.ndarray, eps: float):
    """Rows scaled by 1/sqrt[mean(x^2)+eps], then elementwise gain.

    Returns (y, inv_rms); inv_rms is cached for the backward pass.
    """
    inv_rms = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return x * inv_rms * gain, inv_rms


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def softplus(x: np.ndarray) -> np.ndarray:
    """ln(1+e^x); returns x verbatim above the overflow guard at 30."""
    return np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))


def depthwise_conv1d(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Causal per-channel conv along axis 0; left-padded with w-1 zeros.

    x: [n, d], kernel: [w, d]; kernel[w-1] is the tap at the current position.
    """
    n, d = x.shape
    w = kernel.shape[0]
    y = np.zeros_like(x)
    for j in range(w):
        shift = w - 1 - j  # taps j reaches shift positions into the past
        if shift == 0:
            y += kernel[j] * x
        else:
            y[shift:] += kernel[j] * x[:-shift]
    return y


def ssm_step(
    s1: np.ndarray,
    dt: np.ndarray,
    b: np.ndarray,
    c: np.ndarray,
    a: np.ndarray,
    d: np.ndarray,
    h_prev: np.ndarray,
):
    """One discrete state-space recurrence step.

    Shapes: s1, dt [n, ds]; b, c [n, e]; a [ds, e]; d [ds]; h_prev [n, ds, e].
    Returns (s [n, ds], h_new [n, ds, e], abar [n, ds, e]); abar is cached
    for the backward pass.
    """
    abar = np.exp(dt[:, :, None] * a[None, :, :])
    bbar = dt[:, :, None] * b[:, None, :]
    h_new = abar * h_prev + bbar * s1[:, :, None]
    s = np.einsum("nde,ne->nd", h_new, c) + d * s1
    return s, h_new, abar
