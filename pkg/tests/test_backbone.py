"""Frozen encoder: layer semantics, fusion placement, freeze contract."""

from __future__ import annotations

import numpy as np
import pytest

from memtrack.backbone import Backbone, EncoderLayer, fusion_stages
from memtrack.config import Config
from memtrack.model import TrackerModel
from memtrack.params import ParamStore, Scope
from memtrack.rng import make_rng


def _layer(d=16, heads=2, seed=0, trainable=False):
    store = ParamStore()
    scope = Scope(store, "layer", trainable, make_rng(seed, "enc"))
    return EncoderLayer(scope, d, heads, 2), store


def test_zero_output_projections_give_identity():
    layer, store = _layer()
    store["layer.attn.wo"].value[...] = 0.0
    store["layer.attn.bo"].value[...] = 0.0
    store["layer.ffn.w2"].value[...] = 0.0
    store["layer.ffn.b2"].value[...] = 0.0
    x = make_rng(1, "enc").normal(size=(5, 16))
    y, _ = layer.forward(x)
    assert np.array_equal(y, x)


def test_single_token_attends_to_itself():
    layer, _ = _layer(seed=2)
    x = make_rng(3, "enc").normal(size=(1, 16))
    _, cache = layer.forward(x)
    attn = cache[1]["attn"]
    assert attn.shape == (2, 1, 1)
    assert np.allclose(attn, 1.0)


def test_permutation_equivariance():
    layer, _ = _layer(seed=4)
    rng = make_rng(5, "enc")
    x = rng.normal(size=(7, 16))
    perm = rng.permutation(7)
    y, _ = layer.forward(x)
    y_perm, _ = layer.forward(x[perm])
    assert np.allclose(y_perm, y[perm], atol=1e-12)


def test_fusion_stage_partition():
    assert fusion_stages(8, 4) == [(0, 0, 1), (1, 2, 3), (2, 4, 5), (3, 6, 7)]
    assert fusion_stages(8, 2) == [(0, 0, 3), (1, 4, 7)]
    assert fusion_stages(4, 4) == [(0, 0, 0), (1, 1, 1), (2, 2, 2), (3, 3, 3)]


class _RecordingHook:
    def __init__(self, log, tag):
        self.log = log
        self.tag = tag

    def forward(self, x):
        self.log.append(self.tag)
        return x, None

    def backward(self, g, cache):
        return g


def test_fusion_hook_application_points():
    cfg = Config(image_size=16, template_size=8, patch=4, backbone_dim=16,
                 backbone_depth=4, backbone_heads=2, backbone_ffn_mult=2,
                 dsf_count=2)
    store = ParamStore()
    bb = Backbone(Scope(store, "backbone", False, make_rng(6, "enc")), cfg)
    log: list[str] = []
    hooks = [(_RecordingHook(log, "in0"), _RecordingHook(log, "out0")),
             (_RecordingHook(log, "in1"), _RecordingHook(log, "out1"))]
    x = make_rng(7, "enc").normal(size=(5, 16))
    bb.forward_with_fusion(x, hooks)
    # stages {0,1} and {2,3}: input fusion before layers 0 and 2,
    # output fusion after layers 1 and 3
    assert log == ["in0", "out0", "in1", "out1"]


def test_absent_hooks_match_plain_stack():
    cfg = Config(image_size=16, template_size=8, patch=4, backbone_dim=16,
                 backbone_depth=4, backbone_heads=2, backbone_ffn_mult=2,
                 dsf_count=2)
    store = ParamStore()
    bb = Backbone(Scope(store, "backbone", False, make_rng(8, "enc")), cfg)
    x = make_rng(9, "enc").normal(size=(6, 16))
    plain, _ = bb.forward_with_fusion(x, None)
    skipped, _ = bb.forward_with_fusion(x, [None, None])
    assert np.array_equal(plain, skipped)


def test_forward_deterministic(tiny_cfg):
    model = TrackerModel(tiny_cfg)
    rng = make_rng(10, "enc")
    tmpl = rng.normal(size=(tiny_cfg.n_template_tokens, 16))
    search = rng.normal(size=(tiny_cfg.n_search_tokens, 16))
    a = model.forward_frame([tmpl, tmpl], search, None, None, model.new_dsf_states(),
                            use_memory=False)
    b = model.forward_frame([tmpl, tmpl], search, None, None, model.new_dsf_states(),
                            use_memory=False)
    assert np.array_equal(a.o, b.o)


def test_search_slice_matches_tags(tiny_cfg):
    model = TrackerModel(tiny_cfg)
    rng = make_rng(11, "enc")
    tmpl = rng.normal(size=(tiny_cfg.n_template_tokens, 16))
    search = rng.normal(size=(tiny_cfg.n_search_tokens, 16))
    ff = model.forward_frame([tmpl, tmpl], search, None, None, model.new_dsf_states(),
                             use_memory=False)
    assert np.array_equal(ff.o_s, ff.o[ff.search_idx])
    assert ff.o_s.shape == (tiny_cfg.n_search_tokens, tiny_cfg.backbone_dim)


def test_backbone_input_grads_flow(tiny_cfg):
    """Backward through frozen layers still produces input gradients."""
    model = TrackerModel(tiny_cfg)
    rng = make_rng(12, "enc")
    x = rng.normal(size=(6, 16))
    y, cache = model.backbone.forward_with_fusion(x, None)
    w = rng.normal(size=y.shape)
    g = model.backbone.backward(w, cache)
    h = 1e-6
    flat = x.reshape(-1)
    for i in (0, 17, 40):
        orig = flat[i]
        flat[i] = orig + h
        fp = float((model.backbone.forward_with_fusion(x, None)[0] * w).sum())
        flat[i] = orig - h
        fm = float((model.backbone.forward_with_fusion(x, None)[0] * w).sum())
        flat[i] = orig
        num = (fp - fm) / (2 * h)
        assert abs(g.reshape(-1)[i] - num) <= 1e-5 * max(1.0, abs(num))
