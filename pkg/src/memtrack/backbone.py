"""Frozen transformer encoder with dynamic-state fusion hook points.

A plain pre-norm ViT-style stack stands in for a pretrained hierarchical
backbone: the tracked mechanisms only need full joint attention over
memory, template, search and text tokens. Parameters live in the frozen
partition; backward passes still propagate input gradients through the
stack (prompt tokens and fusion adapters upstream/downstream need them)
but skip frozen weight gradients.

The layer span is split evenly into `dsf_count` stages; each stage fuses
a dynamic-state feature at its first layer's input and its last layer's
output.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .attention import init_mha, mha_backward, mha_forward
from .params import Scope

NORM_EPS = 1e-6


def fusion_stages(depth: int, count: int) -> list[tuple[int, int, int]]:
    """(module_index, input_layer, output_layer) triples, even partition."""
    span = depth // count
    return [(i, i * span, (i + 1) * span - 1) for i in range(count)]


class EncoderLayer:
    def __init__(self, scope: Scope, d: int, heads: int, ffn_mult: int):
        self.d = d
        self.heads = heads
        self.norm1 = scope.ones("norm1", d)
        self.attn = init_mha(scope.child("attn"), d)
        self.norm2 = scope.ones("norm2", d)
        hidden = ffn_mult * d
        self.w1 = scope.xavier("ffn.w1", d, hidden)
        self.b1 = scope.zeros("ffn.b1", hidden)
        self.w2 = scope.xavier("ffn.w2", hidden, d)
        self.b2 = scope.zeros("ffn.b2", d)
        self.trainable = scope.trainable

    def forward(self, x: np.ndarray):
        a_in, c_n1 = ops.rms_norm(x, self.norm1.value, NORM_EPS)
        a_out, c_attn = mha_forward(self.attn, a_in, a_in, self.heads)
        x1 = x + a_out
        f_in, c_n2 = ops.rms_norm(x1, self.norm2.value, NORM_EPS)
        pre = ops.linear(f_in, self.w1.value, self.b1.value)
        hid = ops.silu(pre)
        f_out = ops.linear(hid, self.w2.value, self.b2.value)
        y = x1 + f_out
        cache = (c_n1, c_attn, c_n2, pre, hid, f_in)
        return y, cache

    def backward(self, g: np.ndarray, cache) -> np.ndarray:
        c_n1, c_attn, c_n2, pre, hid, f_in = cache
        if self.trainable:
            dhid, dw2, db2 = ops.linear_backward(g, hid, self.w2.value)
            self.w2.add_grad(dw2)
            self.b2.add_grad(db2)
        else:
            dhid = g @ self.w2.value.T
        dpre = ops.silu_backward(dhid, pre)
        if self.trainable:
            df_in, dw1, db1 = ops.linear_backward(dpre, f_in, self.w1.value)
            self.w1.add_grad(dw1)
            self.b1.add_grad(db1)
        else:
            df_in = dpre @ self.w1.value.T
        dx1_norm, dg2 = ops.rms_norm_backward(df_in, c_n2)
        if self.trainable:
            self.norm2.add_grad(dg2)
        dx1 = g + dx1_norm
        dq, dkv = mha_backward(dx1, c_attn, self.attn)
        da_in = dq + dkv
        dx_norm, dg1 = ops.rms_norm_backward(da_in, c_n1)
        if self.trainable:
            self.norm1.add_grad(dg1)
        return dx1 + dx_norm


class Backbone:
    def __init__(self, scope: Scope, cfg):
        self.cfg = cfg
        self.layers = [
            EncoderLayer(scope.child(f"layer{i}"), cfg.backbone_dim,
                         cfg.backbone_heads, cfg.backbone_ffn_mult)
            for i in range(cfg.backbone_depth)
        ]

    def forward_with_fusion(self, tokens: np.ndarray, hooks: list | None):
        """Run the stack, applying per-stage fusion hooks when given.

        hooks: list over stages of (in_hook, out_hook) or None; each hook
        has .forward(x) -> (y, cache) and .backward(g, cache) -> dx.
        Returns (output, cache).
        """
        depth = len(self.layers)
        stage_of_input: dict[int, int] = {}
        stage_of_output: dict[int, int] = {}
        if hooks:
            for i, start, end in fusion_stages(depth, len(hooks)):
                stage_of_input[start] = i
                stage_of_output[end] = i

        x = tokens
        layer_caches = []
        hook_caches: list[list] = []  # (kind, stage, cache) in application order
        for li, layer in enumerate(self.layers):
            si = stage_of_input.get(li)
            if si is not None and hooks[si] is not None:
                x, hc = hooks[si][0].forward(x)
                hook_caches.append(("in", si, hc))
            else:
                hook_caches.append(None)
            x, lc = layer.forward(x)
            layer_caches.append(lc)
            so = stage_of_output.get(li)
            if so is not None and hooks[so] is not None:
                x, hc = hooks[so][1].forward(x)
                hook_caches.append(("out", so, hc))
            else:
                hook_caches.append(None)
        return x, (layer_caches, hook_caches, hooks)

    def backward(self, g: np.ndarray, cache, stage_input_grads: dict[int, np.ndarray] | None = None):
        """Reverse pass; optional extra grads injected at stage inputs.

        stage_input_grads maps stage index -> gradient w.r.t. the tokens
        entering that stage's input fusion hook (used when a dynamic-state
        module consumes intermediate activations).
        """
        layer_caches, hook_caches, hooks = cache
        depth = len(self.layers)
        stage_in_at: dict[int, int] = {}
        if hooks:
            for i, start, _end in fusion_stages(depth, len(hooks)):
                stage_in_at[start] = i
        for li in reversed(range(depth)):
            hc = hook_caches[2 * li + 1]
            if hc is not None:
                _, si, c = hc
                g = hooks[si][1].backward(g, c)
            g = self.layers[li].backward(g, layer_caches[li])
            hc = hook_caches[2 * li]
            if hc is not None:
                _, si, c = hc
                g = hooks[si][0].backward(g, c)
            si = stage_in_at.get(li)
            if stage_input_grads and si in stage_input_grads:
                g = g + stage_input_grads[si]
        return g
