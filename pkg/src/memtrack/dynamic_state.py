"""Dynamic target-state layers and their backbone fusion adapters.

Each module keeps a per-token hidden state h of shape [tokens, inner,
state] advanced once per video frame by a discrete state-space step with
input-dependent discretization: Abar = exp(dt*A) with A = -exp(A_log)
strictly negative, so every state coordinate decays and the influence of
old frames vanishes exponentially (decay_envelope_check makes that bound
executable). Updates consume only search-region features; templates never
touch the state.

The state feature F re-enters the backbone through two cross-attention
fusion adapters per module (stage input and stage output). Their output
projections and the dynamic-state output projection start at zero, so a
freshly initialized module is exactly transparent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels, ops
from .attention import init_mha, mha_backward, mha_forward
from .params import Scope

NORM_EPS = 1e-6


@dataclass
class DsfState:
    h: np.ndarray | None = None          # [n, inner, state]
    last_f: np.ndarray | None = None     # feature offered to fusion next frame
    frames_seen: int = 0


def decay_envelope_check(delta_seq: list[np.ndarray], a: np.ndarray, span: int | None = None):
    """Max-norm of the elementwise product of decay factors vs exp(-c*span).

    c is the weakest decay rate min(dt * |A|) over steps and coordinates.
    Raises on non-positive dt; asserts product <= bound before returning
    (product_norm, bound).
    """
    if span is None:
        span = len(delta_seq)
    if span == 0:
        return 1.0, 1.0
    deltas = np.stack(delta_seq[:span])          # [span, inner]
    if np.any(deltas <= 0):
        raise ValueError("all discretization steps must be strictly positive")
    log_factors = deltas[:, :, None] * a[None, :, :]   # [span, inner, state]
    product = np.exp(log_factors.sum(axis=0))
    c = float(np.min(deltas[:, :, None] * np.abs(a)[None, :, :]))
    product_norm = float(np.max(np.abs(product)))
    bound = float(np.exp(-c * span))
    assert product_norm <= bound * (1 + 1e-12), "decay product exceeded its envelope"
    return product_norm, bound


class _FusionHook:
    """One cross-attention splice: x + Attn(q=x, kv=F), zero-init output."""

    def __init__(self, module: "DsfModule", params, f: np.ndarray,
                 search_idx: np.ndarray | None, capture: bool):
        self.module = module
        self.params = params
        self.f = f
        self.search_idx = search_idx
        self.capture = capture

    def forward(self, x: np.ndarray):
        if self.capture:
            self.module.captured_stage_input = x[self.search_idx]
        y, cache = mha_forward(self.params, x, self.f, self.module.heads)
        return x + y, cache

    def backward(self, g: np.ndarray, cache):
        dxq, dkv = mha_backward(g, cache, self.params)
        self.module.pending_df = self.module.pending_df + dkv
        return g + dxq


class DsfModule:
    def __init__(self, scope: Scope, cfg):
        d = cfg.backbone_dim
        ds = cfg.dsf_inner_dim
        e = cfg.dsf_state_dim
        rank = cfg.dsf_dt_rank_effective
        self.cfg = cfg
        self.heads = cfg.backbone_heads
        self.d, self.ds, self.e, self.rank = d, ds, e, rank

        self.norm = scope.ones("norm", d)
        self.wg = scope.xavier("gate.w", d, ds)
        self.bg = scope.zeros("gate.b", ds)
        self.wc = scope.xavier("convin.w", d, ds)
        self.bc = scope.zeros("convin.b", ds)
        self.conv_k = scope.normal("conv.kernel", (cfg.dsf_conv_width, ds),
                                   std=1.0 / np.sqrt(cfg.dsf_conv_width))
        self.w1 = scope.xavier("split.w", ds, rank + 2 * e)
        self.b1 = scope.zeros("split.b", rank + 2 * e)
        self.w2 = scope.xavier("dt.w", rank, ds)
        rng = scope.rng
        dt_init = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=ds))
        self.b2 = scope.tensor("dt.b", dt_init + np.log(-np.expm1(-dt_init)))
        self.a_log = scope.tensor("a_log", np.tile(np.log(np.arange(1, e + 1)), (ds, 1)))
        self.d_skip = scope.ones("d_skip", ds)
        self.w_out = scope.zeros("out.w", (ds, d))
        self.b_out = scope.zeros("out.b", d)
        self.fuse_in = init_mha(scope.child("fuse_in"), d, zero_out=True)
        self.fuse_out = init_mha(scope.child("fuse_out"), d, zero_out=True)

        # per-frame scratch used by the trainer's reverse pass
        self.pending_df = 0.0
        self.captured_stage_input: np.ndarray | None = None

    # ------------------------------------------------------------- scan

    def ssm_scan(self, s1: np.ndarray, h_prev: np.ndarray):
        """One recurrence step over the frame axis. Returns (s, h_new, cache)."""
        rank, e = self.rank, self.e
        mix = ops.linear(s1, self.w1.value, self.b1.value)
        dt_low = mix[:, :rank]
        b = mix[:, rank:rank + e]
        c = mix[:, rank + e:]
        dt_pre = ops.linear(dt_low, self.w2.value, self.b2.value)
        dt = ops.softplus(dt_pre)
        assert np.all(dt > 0), "discretization step must stay positive"
        a = -np.exp(self.a_log.value)
        s, h_new, abar = kernels.ssm_step(s1, dt, b, c, a, self.d_skip.value, h_prev)
        cache = dict(s1=s1, dt_low=dt_low, b=b, c=c, dt_pre=dt_pre, dt=dt,
                     a=a, h_prev=h_prev, h_new=h_new, abar=abar)
        return s, h_new, cache

    def ssm_scan_backward(self, g_s: np.ndarray, g_h: np.ndarray, cache):
        """Reverse of one scan step. Returns (d_s1, d_h_prev)."""
        s1, dt, b, c = cache["s1"], cache["dt"], cache["b"], cache["c"]
        abar, h_prev, h_new, a = cache["abar"], cache["h_prev"], cache["h_new"], cache["a"]

        gh = g_h + g_s[:, :, None] * c[:, None, :]
        gc = np.einsum("nde,nd->ne", h_new, g_s)
        self.d_skip.add_grad((g_s * s1).sum(axis=0))
        gs1 = g_s * self.d_skip.value

        gh_prev = gh * abar
        gabar = gh * h_prev
        bbar = dt[:, :, None] * b[:, None, :]
        gbbar = gh * s1[:, :, None]
        gdt = (gabar * abar * a[None]).sum(axis=-1) + (gbbar * b[:, None, :]).sum(axis=-1)
        ga = (gabar * abar * dt[:, :, None]).sum(axis=0)
        gb = (gbbar * dt[:, :, None]).sum(axis=1)
        gs1 += (gh * bbar).sum(axis=-1)
        self.a_log.add_grad(ga * a)  # d a / d a_log = a

        gdt_pre = ops.softplus_backward(gdt, cache["dt_pre"])
        gdt_low, gw2, gb2 = ops.linear_backward(gdt_pre, cache["dt_low"], self.w2.value)
        self.w2.add_grad(gw2)
        self.b2.add_grad(gb2)
        gmix = np.concatenate([gdt_low, gb, gc], axis=1)
        gs1_mix, gw1, gb1 = ops.linear_backward(gmix, s1, self.w1.value)
        self.w1.add_grad(gw1)
        self.b1.add_grad(gb1)
        return gs1 + gs1_mix, gh_prev

    # ---------------------------------------------------------- forward

    def dynamic_state_forward(self, features: np.ndarray, state: DsfState):
        """Gated state update from one frame's features.

        Returns (f, new_state, cache). `features` is the state-update
        source (search-region output by default); the caller guarantees it
        is causally available.
        """
        n = features.shape[0]
        h_prev = state.h if state.h is not None else np.zeros((n, self.ds, self.e))
        i_n, c_norm = ops.rms_norm(features, self.norm.value, NORM_EPS)
        g_pre = ops.linear(i_n, self.wg.value, self.bg.value)
        g_act = ops.silu(g_pre)
        c_pre = ops.linear(i_n, self.wc.value, self.bc.value)
        conv_out = ops.depthwise_conv1d(c_pre, self.conv_k.value)
        s1 = ops.silu(conv_out)
        s, h_new, scan_cache = self.ssm_scan(s1, h_prev)
        gs = g_act * s
        f = features + ops.linear(gs, self.w_out.value, self.b_out.value)
        new_state = DsfState(h=h_new, last_f=f, frames_seen=state.frames_seen + 1)
        cache = dict(features=features, c_norm=c_norm, i_n=i_n, g_pre=g_pre,
                     g_act=g_act, c_pre=c_pre, conv_out=conv_out, s1=s1, s=s,
                     gs=gs, scan=scan_cache)
        return f, new_state, cache

    def dynamic_state_backward(self, g_f: np.ndarray, g_h: np.ndarray | None, cache):
        """Reverse of dynamic_state_forward.

        g_f: grad w.r.t. the emitted feature; g_h: grad w.r.t. the new
        hidden state carried into later frames (None when unused).
        Returns (d_features, d_h_prev).
        """
        if g_h is None:
            g_h = np.zeros_like(cache["scan"]["h_new"])
        dgs, dw_out, db_out = ops.linear_backward(g_f, cache["gs"], self.w_out.value)
        self.w_out.add_grad(dw_out)
        self.b_out.add_grad(db_out)
        dg_act = dgs * cache["s"]
        ds = dgs * cache["g_act"]
        ds1, dh_prev = self.ssm_scan_backward(ds, g_h, cache["scan"])
        dconv_out = ops.silu_backward(ds1, cache["conv_out"])
        dc_pre, dk = ops.depthwise_conv1d_backward(dconv_out, cache["c_pre"], self.conv_k.value)
        self.conv_k.add_grad(dk)
        di_c, dwc, dbc = ops.linear_backward(dc_pre, cache["i_n"], self.wc.value)
        self.wc.add_grad(dwc)
        self.bc.add_grad(dbc)
        dg_pre = ops.silu_backward(dg_act, cache["g_pre"])
        di_g, dwg, dbg = ops.linear_backward(dg_pre, cache["i_n"], self.wg.value)
        self.wg.add_grad(dwg)
        self.bg.add_grad(dbg)
        d_feat_norm, dgain = ops.rms_norm_backward(di_c + di_g, cache["c_norm"])
        self.norm.add_grad(dgain)
        return g_f + d_feat_norm, dh_prev

    # ------------------------------------------------------------ fusion

    def make_hooks(self, f: np.ndarray | None, search_idx: np.ndarray | None = None):
        """Fusion hook pair for one frame, or None when no state feature yet."""
        self.pending_df = 0.0
        self.captured_stage_input = None
        capture = self.cfg.dsf_source == "stage_input"
        if f is None:
            if capture:
                return (_CaptureOnlyHook(self, search_idx), _IdentityHook())
            return None
        return (
            _FusionHook(self, self.fuse_in, f, search_idx, capture),
            _FusionHook(self, self.fuse_out, f, None, False),
        )

    def fuse(self, x: np.ndarray, f: np.ndarray | None, which: str = "in"):
        """Single fusion application (testing entry point)."""
        if f is None:
            return x, None
        params = self.fuse_in if which == "in" else self.fuse_out
        y, cache = mha_forward(params, x, f, self.heads)
        return x + y, cache


class _CaptureOnlyHook:
    """Records stage-input features on the first tracked frame (no F yet)."""

    def __init__(self, module: DsfModule, search_idx):
        self.module = module
        self.search_idx = search_idx

    def forward(self, x):
        self.module.captured_stage_input = x[self.search_idx]
        return x, None

    def backward(self, g, cache):
        return g


class _IdentityHook:
    def forward(self, x):
        return x, None

    def backward(self, g, cache):
        return g
