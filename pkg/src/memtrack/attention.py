"""Multi-head attention built from the numerics primitives.

Used by the frozen encoder layers (self-attention) and by the dynamic
state fusion blocks (cross-attention with a zero-initialized output
projection). Forward returns a cache consumed by the paired backward.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .params import ParamTensor, Scope


def init_mha(scope: Scope, d: int, zero_out: bool = False) -> dict[str, ParamTensor]:
    p = {
        "wq": scope.xavier("wq", d, d),
        "bq": scope.zeros("bq", d),
        "wk": scope.xavier("wk", d, d),
        "bk": scope.zeros("bk", d),
        "wv": scope.xavier("wv", d, d),
        "bv": scope.zeros("bv", d),
        "wo": scope.zeros("wo", (d, d)) if zero_out else scope.xavier("wo", d, d),
        "bo": scope.zeros("bo", d),
    }
    return p


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    n, d = x.shape
    return x.reshape(n, heads, d // heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def mha_forward(
    p: dict[str, ParamTensor],
    x_q: np.ndarray,
    x_kv: np.ndarray,
    heads: int,
    bias: np.ndarray | None = None,
):
    """Attention of x_q over x_kv. bias, if given, broadcasts to [H, Nq, Nk].

    Returns (y, cache); cache["attn"] holds the per-head attention rows.
    """
    d = x_q.shape[1]
    dh = d // heads
    q = ops.linear(x_q, p["wq"].value, p["bq"].value)
    k = ops.linear(x_kv, p["wk"].value, p["bk"].value)
    v = ops.linear(x_kv, p["wv"].value, p["bv"].value)
    qh, kh, vh = (_split_heads(t, heads) for t in (q, k, v))
    logits = np.einsum("hqd,hkd->hqk", qh, kh) / np.sqrt(dh)
    if bias is not None:
        logits = logits + bias
    attn = ops.softmax_rows(logits)
    outh = np.einsum("hqk,hkd->hqd", attn, vh)
    out = _merge_heads(outh)
    y = ops.linear(out, p["wo"].value, p["bo"].value)
    cache = {"xq": x_q, "xkv": x_kv, "qh": qh, "kh": kh, "vh": vh,
             "attn": attn, "out": out, "heads": heads}
    return y, cache


def mha_backward(g: np.ndarray, cache: dict, p: dict[str, ParamTensor]):
    """Accumulates grads into p; returns (dx_q, dx_kv)."""
    heads = cache["heads"]
    qh, kh, vh, attn = cache["qh"], cache["kh"], cache["vh"], cache["attn"]
    dh = qh.shape[2]

    dout, dwo, dbo = ops.linear_backward(g, cache["out"], p["wo"].value)
    p["wo"].add_grad(dwo)
    p["bo"].add_grad(dbo)

    douth = _split_heads(dout, heads)
    dattn = np.einsum("hqd,hkd->hqk", douth, vh)
    dvh = np.einsum("hqk,hqd->hkd", attn, douth)
    dlogits = ops.softmax_rows_backward(dattn, attn) / np.sqrt(dh)
    dqh = np.einsum("hqk,hkd->hqd", dlogits, kh)
    dkh = np.einsum("hqk,hqd->hkd", dlogits, qh)

    dq, dk, dv = _merge_heads(dqh), _merge_heads(dkh), _merge_heads(dvh)
    dx_q, dwq, dbq = ops.linear_backward(dq, cache["xq"], p["wq"].value)
    dx_k, dwk, dbk = ops.linear_backward(dk, cache["xkv"], p["wk"].value)
    dx_v, dwv, dbv = ops.linear_backward(dv, cache["xkv"], p["wv"].value)
    p["wq"].add_grad(dwq)
    p["bq"].add_grad(dbq)
    p["wk"].add_grad(dwk)
    p["bk"].add_grad(dbk)
    p["wv"].add_grad(dwv)
    p["bv"].add_grad(dbv)
    return dx_q, dx_k + dx_v
