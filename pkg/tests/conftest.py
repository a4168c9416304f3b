from __future__ import annotations

import numpy as np
import pytest

from memtrack.config import Config
from memtrack.rng import make_rng


@pytest.fixture
def tiny_cfg() -> Config:
    """Smallest config exercising every module."""
    return Config(
        image_size=16, template_size=8, patch=4,
        backbone_dim=16, backbone_depth=2, backbone_heads=2, backbone_ffn_mult=2,
        mcp_n_tokens=4, mcp_bank_l=5, mcp_ffn_mult=2,
        dsf_count=2, dsf_inner_mult=2, dsf_state_dim=4, dsf_conv_width=3,
    )


@pytest.fixture
def rng():
    return make_rng(1234, "tests")


def fd_check(f, params, h: float = 1e-6, rtol: float = 1e-4, atol: float = 1e-7,
             max_coords: int = 12, rng=None):
    """Compare accumulated analytic grads against central differences.

    Probes every coordinate for small tensors, a deterministic subsample
    for larger ones. f is a zero-argument closure over the live params.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        assert p.grad is not None, f"no grad accumulated for {p.name}"
        flat = p.value.reshape(-1)
        gflat = p.grad.reshape(-1)
        if flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            err = abs(gflat[i] - num)
            tol = rtol * max(abs(gflat[i]), abs(num)) + atol
            assert err <= tol, (
                f"{p.name}[{i}]: analytic {gflat[i]:.8e} vs numeric {num:.8e} "
                f"(err {err:.2e} > tol {tol:.2e})"
            )
