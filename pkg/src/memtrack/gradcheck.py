"""Finite-difference gradient oracle.

Central differences over ParamTensor coordinates: the independent check
for every hand-written backward rule in the model. Tests call this with
f evaluated through the real forward path and compare against the
analytic grads accumulated by the matching backward pass.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .params import NumericError, ParamTensor


def finite_diff_grad(
    f: Callable[[], float],
    params: Iterable[ParamTensor],
    h: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Per-coordinate central differences (f(p+h)-f(p-h))/(2h).

    f is a zero-argument closure reading the current ParamTensor values;
    it must be deterministic. Values are restored exactly afterwards.
    """
    grads: dict[str, np.ndarray] = {}
    for p in params:
        g = np.zeros_like(p.value)
        flat_v = p.value.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_v.size):
            orig = flat_v[i]
            flat_v[i] = orig + h
            f_plus = float(f())
            flat_v[i] = orig - h
            f_minus = float(f())
            flat_v[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"non-finite objective while probing {p.name}[{i}]")
            flat_g[i] = (f_plus - f_minus) / (2.0 * h)
        grads[p.name] = g
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a-n| / max(1e-8, |a|+|n|) over coordinates."""
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
