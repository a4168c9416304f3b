"""Kernel backend selection.

Forward hot kernels come from the compiled extension when it imported
cleanly, otherwise from the numpy reference module. Set
MEMTRACK_FORCE_NUMPY=1 to pin the reference backend regardless.

Matrix products are numpy's BLAS either way; the extension covers the
fused elementwise kernels (softmax, rmsnorm, activations, causal conv,
state-space step) where a single pass beats a chain of numpy temporaries.
Backward passes always run on the reference formulas.
"""

from __future__ import annotations

import os

from . import reference

_impl = reference
if not os.environ.get("MEMTRACK_FORCE_NUMPY"):
    try:
        from . import _fast as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = reference

BACKEND: str = _impl.BACKEND

softmax_rows = _impl.softmax_rows
rms_norm = _impl.rms_norm
sigmoid = _impl.sigmoid
silu = _impl.silu
softplus = _impl.softplus
depthwise_conv1d = _impl.depthwise_conv1d
ssm_step = _impl.ssm_step
