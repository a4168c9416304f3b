"""Memory bank and memory-aware compression prompt.

A bounded store of per-frame search-region features is compressed into a
fixed number of prompt tokens by learnable queries: multi-head cross
attention with a frame-level linear position bias (newest frame bias 0,
older frames penalized per head by slope 2^(-8/h)), a residual gated by
nothing but the query path, an FFN block, then one self-attention + FFN
enhancement block. Output size is constant in bank size, so the backbone
sequence length never grows with history.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .attention import init_mha, mha_backward, mha_forward
from .params import Scope

NORM_EPS = 1e-6


class StateError(RuntimeError):
    pass


# ------------------------------------------------------------- selection

def select_memory(tracked_indices: list[int], capacity: int) -> list[int]:
    """Equal-interval sample of the tracked list, always keeping both ends.

    Positions are round(i*(T-1)/(C-1)) for i in 0..C-1 with half-up
    rounding; below capacity everything is kept.
    """
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    t = len(tracked_indices)
    if t == 0:
        raise ValueError("tracked_indices must be nonempty")
    if t <= capacity:
        return list(tracked_indices)
    if capacity == 1:
        return [tracked_indices[-1]]
    positions = [
        int(np.floor(i * (t - 1) / (capacity - 1) + 0.5)) for i in range(capacity)
    ]
    return [tracked_indices[p] for p in positions]


def alibi_slopes(heads: int) -> np.ndarray:
    """Per-head slopes m_h = 2^(-8/h), h = 1..heads."""
    return np.array([2.0 ** (-8.0 / h) for h in range(1, heads + 1)])


def alibi_bias(frame_pos: int, n_frames: int, head: int) -> float:
    """Bias for a token of the frame at 1-based bank position `frame_pos`.

    Zero for the newest frame, -m_h per frame of distance for older ones;
    identical for every token of the frame.
    """
    return -float(alibi_slopes(head)[head - 1]) * abs(frame_pos - n_frames)


# ------------------------------------------------------------ memory bank

@dataclass
class BankFrame:
    index: int
    features: np.ndarray  # [N_S, d]


@dataclass
class MemoryBank:
    capacity: int
    policy: str = "uniform"
    fifo_k: int = 5
    frames: list[BankFrame] = field(default_factory=list)
    all_tracked: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def last_offered(self) -> int | None:
        return self.all_tracked[-1] if self.all_tracked else None

    def selected_indices(self) -> list[int]:
        return [f.index for f in self.frames]

    def insert(self, frame_index: int, features: np.ndarray) -> None:
        """Offer one tracked frame's features; retention follows the policy.

        Uniform: keep the equal-interval sample of all tracked indices,
        substituting the nearest still-stored frame when an ideal index was
        already evicted. FIFO-every-k: store only every k-th frame index and
        evict the oldest past capacity.
        """
        if self.last_offered is not None and frame_index <= self.last_offered:
            raise StateError(
                f"out-of-order insert: {frame_index} after {self.last_offered}"
            )
        self.all_tracked.append(frame_index)
        if self.policy == "fifo_every_k":
            if frame_index % self.fifo_k == 0:
                self.frames.append(BankFrame(frame_index, features))
                if len(self.frames) > self.capacity:
                    self.frames.pop(0)
            return
        self.frames.append(BankFrame(frame_index, features))
        if len(self.frames) > self.capacity:
            self._reselect()

    def _reselect(self) -> None:
        """Match the ideal equal-interval sample to stored frames, one each.

        Ideal indices may point at frames evicted long ago; every ideal slot
        takes the nearest still-stored frame not already claimed (newest
        slot first, so the most recent frame is always retained), and the
        one unclaimed frame is evicted.
        """
        ideal = select_memory(self.all_tracked, self.capacity)
        stored = {f.index: f for f in self.frames}
        remaining = sorted(stored)
        kept: list[int] = []
        for want in reversed(ideal):
            best = min(remaining, key=lambda s: (abs(s - want), s))
            kept.append(best)
            remaining.remove(best)
        self.frames = [stored[i] for i in sorted(kept)]

    def token_matrix(self) -> np.ndarray:
        if not self.frames:
            raise StateError("memory bank is empty")
        return np.concatenate([f.features for f in self.frames], axis=0)

    def token_positions(self, on_video_index: bool) -> np.ndarray:
        """Per-token frame distance from the newest frame (newest -> 0)."""
        if not self.frames:
            raise StateError("memory bank is empty")
        n = len(self.frames)
        dists = []
        for slot, f in enumerate(self.frames, start=1):
            if on_video_index:
                d = self.frames[-1].index - f.index
            else:
                d = n - slot
            dists.append(np.full(f.features.shape[0], float(d)))
        return np.concatenate(dists)


# -------------------------------------------------------------- compressor

class McpModule:
    """Learned-query compressor over the memory bank."""

    def __init__(self, scope: Scope, cfg):
        d = cfg.backbone_dim
        hidden = cfg.mcp_ffn_mult * d
        self.cfg = cfg
        self.heads = cfg.backbone_heads
        self.bias_kind = cfg.mcp_bias
        self.slopes = alibi_slopes(self.heads)
        self.query = scope.normal("query_tokens", (cfg.mcp_n_tokens, d))
        self.norm_q = scope.ones("norm_q", d)
        self.norm_kv = scope.ones("norm_kv", d)
        self.wq = scope.xavier("wq", d, d)
        self.bq = scope.zeros("bq", d)
        self.wkv = scope.xavier("wkv", d, 2 * d)
        self.bkv = scope.zeros("bkv", 2 * d)
        self.wo = scope.xavier("wo", d, d)
        self.bo = scope.zeros("bo", d)
        self.norm_ffn = scope.ones("norm_ffn", d)
        self.w1 = scope.xavier("ffn.w1", d, hidden)
        self.b1 = scope.zeros("ffn.b1", hidden)
        self.w2 = scope.xavier("ffn.w2", hidden, d)
        self.b2 = scope.zeros("ffn.b2", d)
        self.enh_norm1 = scope.ones("enh.norm1", d)
        self.enh_attn = init_mha(scope.child("enh.attn"), d)
        self.enh_norm2 = scope.ones("enh.norm2", d)
        self.ew1 = scope.xavier("enh.ffn.w1", d, hidden)
        self.eb1 = scope.zeros("enh.ffn.b1", hidden)
        self.ew2 = scope.xavier("enh.ffn.w2", hidden, d)
        self.eb2 = scope.zeros("enh.ffn.b2", d)
        if self.bias_kind == "absolute":
            self.abs_pos = scope.normal("abs_pos", (cfg.mcp_bank_l, d))

    def logit_bias(self, distances: np.ndarray) -> np.ndarray | None:
        """[heads, 1, N_mb] additive bias, or None for content-only attention."""
        if self.bias_kind != "alibi":
            return None
        return (-self.slopes[:, None, None]) * distances[None, None, :]

    def compress(self, bank: MemoryBank):
        """Bank -> fixed-size prompt tokens. Returns (M, cache)."""
        if len(bank) == 0:
            raise StateError("cannot compress an empty memory bank")
        f_m = bank.token_matrix()
        dists = bank.token_positions(self.cfg.mcp_alibi_on_video_index)
        return self.compress_features(f_m, dists)

    def compress_features(self, f_m: np.ndarray, distances: np.ndarray):
        """Compression over an explicit token matrix (testing entry point)."""
        d = self.query.value.shape[1]
        heads = self.heads
        dh = d // heads
        cache: dict = {"f_m": f_m, "distances": distances}

        kv_in = f_m
        if self.bias_kind == "absolute":
            slots = np.minimum(distances.astype(int), self.abs_pos.value.shape[0] - 1)
            kv_in = f_m + self.abs_pos.value[slots]
            cache["abs_slots"] = slots

        q = self.query.value
        nq, c_nq = ops.rms_norm(q, self.norm_q.value, NORM_EPS)
        qp = ops.linear(nq, self.wq.value, self.bq.value)
        nkv, c_nkv = ops.rms_norm(kv_in, self.norm_kv.value, NORM_EPS)
        kv = ops.linear(nkv, self.wkv.value, self.bkv.value)
        k, v = kv[:, :d], kv[:, d:]

        qh = qp.reshape(-1, heads, dh).transpose(1, 0, 2)
        kh = k.reshape(-1, heads, dh).transpose(1, 0, 2)
        vh = v.reshape(-1, heads, dh).transpose(1, 0, 2)
        logits = np.einsum("hqd,hkd->hqk", qh, kh) / np.sqrt(dh)
        bias = self.logit_bias(distances)
        if bias is not None:
            logits = logits + bias
        attn = ops.softmax_rows(logits)
        outh = np.einsum("hqk,hkd->hqd", attn, vh)
        out = outh.transpose(1, 0, 2).reshape(-1, d)
        m1 = ops.linear(out, self.wo.value, self.bo.value) + q

        n1, c_n1 = ops.rms_norm(m1, self.norm_ffn.value, NORM_EPS)
        pre = ops.linear(n1, self.w1.value, self.b1.value)
        hid = ops.silu(pre)
        m2 = ops.linear(hid, self.w2.value, self.b2.value) + m1

        e_in, c_e1 = ops.rms_norm(m2, self.enh_norm1.value, NORM_EPS)
        e_attn, c_eattn = mha_forward(self.enh_attn, e_in, e_in, heads)
        m3 = m2 + e_attn
        e2, c_e2 = ops.rms_norm(m3, self.enh_norm2.value, NORM_EPS)
        epre = ops.linear(e2, self.ew1.value, self.eb1.value)
        ehid = ops.silu(epre)
        m = m3 + ops.linear(ehid, self.ew2.value, self.eb2.value)

        cache.update(
            c_nq=c_nq, nq=nq, c_nkv=c_nkv, nkv=nkv, qh=qh, kh=kh, vh=vh,
            attn=attn, out=out, c_n1=c_n1, n1=n1, pre=pre, hid=hid,
            c_e1=c_e1, e_in=e_in, c_eattn=c_eattn, c_e2=c_e2, e2=e2,
            epre=epre, ehid=ehid,
        )
        return m, cache

    def compress_backward(self, g: np.ndarray, cache) -> np.ndarray:
        """Accumulates parameter grads; returns d(f_m) for bank backprop."""
        d = self.query.value.shape[1]
        heads = self.heads
        dh = d // heads

        # enhancement FFN
        dehid, dew2, deb2 = ops.linear_backward(g, cache["ehid"], self.ew2.value)
        self.ew2.add_grad(dew2)
        self.eb2.add_grad(deb2)
        depre = ops.silu_backward(dehid, cache["epre"])
        de2, dew1, deb1 = ops.linear_backward(depre, cache["e2"], self.ew1.value)
        self.ew1.add_grad(dew1)
        self.eb1.add_grad(deb1)
        dm3_n, dgain_e2 = ops.rms_norm_backward(de2, cache["c_e2"])
        self.enh_norm2.add_grad(dgain_e2)
        dm3 = g + dm3_n
        # enhancement self-attention
        dq_e, dkv_e = mha_backward(dm3, cache["c_eattn"], self.enh_attn)
        de_in = dq_e + dkv_e
        dm2_n, dgain_e1 = ops.rms_norm_backward(de_in, cache["c_e1"])
        self.enh_norm1.add_grad(dgain_e1)
        dm2 = dm3 + dm2_n

        # aggregation FFN
        dhid, dw2, db2 = ops.linear_backward(dm2, cache["hid"], self.w2.value)
        self.w2.add_grad(dw2)
        self.b2.add_grad(db2)
        dpre = ops.silu_backward(dhid, cache["pre"])
        dn1, dw1, db1 = ops.linear_backward(dpre, cache["n1"], self.w1.value)
        self.w1.add_grad(dw1)
        self.b1.add_grad(db1)
        dm1_n, dgain_ffn = ops.rms_norm_backward(dn1, cache["c_n1"])
        self.norm_ffn.add_grad(dgain_ffn)
        dm1 = dm2 + dm1_n

        # cross attention
        dout, dwo, dbo = ops.linear_backward(dm1, cache["out"], self.wo.value)
        self.wo.add_grad(dwo)
        self.bo.add_grad(dbo)
        dq_direct = dm1  # residual +q in m1
        douth = dout.reshape(-1, heads, dh).transpose(1, 0, 2)
        attn, vh, qh, kh = cache["attn"], cache["vh"], cache["qh"], cache["kh"]
        dattn = np.einsum("hqd,hkd->hqk", douth, vh)
        dvh = np.einsum("hqk,hqd->hkd", attn, douth)
        dlogits = ops.softmax_rows_backward(dattn, attn) / np.sqrt(dh)
        dqh = np.einsum("hqk,hkd->hqd", dlogits, kh)
        dkh = np.einsum("hqk,hqd->hkd", dlogits, qh)
        dqp = dqh.transpose(1, 0, 2).reshape(-1, d)
        dk = dkh.transpose(1, 0, 2).reshape(-1, d)
        dv = dvh.transpose(1, 0, 2).reshape(-1, d)

        dkv = np.concatenate([dk, dv], axis=1)
        dnkv, dwkv, dbkv = ops.linear_backward(dkv, cache["nkv"], self.wkv.value)
        self.wkv.add_grad(dwkv)
        self.bkv.add_grad(dbkv)
        dkv_in, dgain_kv = ops.rms_norm_backward(dnkv, cache["c_nkv"])
        self.norm_kv.add_grad(dgain_kv)

        dnq, dwq, dbq = ops.linear_backward(dqp, cache["nq"], self.wq.value)
        self.wq.add_grad(dwq)
        self.bq.add_grad(dbq)
        dq_norm, dgain_q = ops.rms_norm_backward(dnq, cache["c_nq"])
        self.norm_q.add_grad(dgain_q)
        self.query.add_grad(dq_direct + dq_norm)

        if self.bias_kind == "absolute":
            slots = cache["abs_slots"]
            dtab = np.zeros_like(self.abs_pos.value)
            np.add.at(dtab, slots, dkv_in)
            self.abs_pos.add_grad(dtab)
        return dkv_in
