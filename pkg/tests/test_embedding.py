"""Six-channel construction, patch embedding, sequence assembly, frame files."""

from __future__ import annotations

import numpy as np
import pytest

from memtrack.config import Config
from memtrack.embedding import (RGB, RGBD, RGBL, SEG_MEMORY, SEG_SEARCH,
                                SEG_TEMPLATE, SEG_TEXT, Embedder,
                                MultiModalFrame, ValidationError,
                                build_six_channel, patch_embed,
                                read_frame_file, write_frame_file)
from memtrack.params import DimensionError, ParamStore, Scope
from memtrack.rng import make_rng


def _rgb_frame(rng, h=8, w=8, modality=RGB):
    return MultiModalFrame(rgb=rng.uniform(0, 255, size=(h, w, 3)), aux=None,
                           modality=modality)


def test_six_channel_duplicates_rgb(rng):
    frame = _rgb_frame(rng)
    six = build_six_channel(frame)
    assert np.array_equal(six[..., 0:3], six[..., 3:6])


def test_six_channel_concatenates_aux(rng):
    aux = rng.uniform(0, 255, size=(8, 8, 3))
    frame = MultiModalFrame(rgb=rng.uniform(0, 255, size=(8, 8, 3)), aux=aux,
                            modality=RGBD)
    six = build_six_channel(frame)
    assert np.array_equal(six[..., 3:6], aux)


def test_six_channel_channel_means():
    frame = MultiModalFrame(rgb=np.zeros((4, 4, 3)), aux=np.full((4, 4, 3), 255.0),
                            modality=RGBD)
    six = build_six_channel(frame)
    assert np.allclose(six.mean(axis=(0, 1)), [0, 0, 0, 255, 255, 255])


def test_aux_presence_matches_modality(rng):
    with pytest.raises(ValidationError):
        MultiModalFrame(rgb=np.zeros((4, 4, 3)), aux=None, modality=RGBD).validate()
    with pytest.raises(ValidationError):
        MultiModalFrame(rgb=np.zeros((4, 4, 3)), aux=np.zeros((4, 4, 3)),
                        modality=RGB).validate()


def test_pixel_range_validated():
    with pytest.raises(ValidationError):
        MultiModalFrame(rgb=np.full((4, 4, 3), 256.0), aux=None, modality=RGB).validate()


# ------------------------------------------------------------- patch embed

def test_patch_embed_zero_image_zero_bias(rng):
    w = rng.normal(size=(4 * 4 * 6, 7))
    out = patch_embed(np.zeros((8, 8, 6)), 4, w, np.zeros(7))
    assert np.array_equal(out, np.zeros((4, 7)))


def test_patch_embed_token_count(rng):
    w = rng.normal(size=(8 * 8 * 6, 5))
    out = patch_embed(rng.normal(size=(16, 16, 6)), 8, w, np.zeros(5))
    assert out.shape == (4, 5)


def test_patch_embed_split_projection_equivalence(rng):
    """Duplicated-RGB input equals projecting the 3-channel patch by W1+W2."""
    p, d = 4, 6
    x3 = rng.normal(size=(8, 8, 3))
    x6 = np.concatenate([x3, x3], axis=2)
    w = rng.normal(size=(p * p * 6, d))
    b = rng.normal(size=d)
    # channel-interleaved layout: rows alternate (dy, dx, channel)
    w_resh = w.reshape(p * p, 6, d)
    w_sum = (w_resh[:, 0:3, :] + w_resh[:, 3:6, :]).reshape(p * p * 3, d)
    direct = patch_embed(x6, p, w, b)
    folded = patch_embed(np.concatenate([x3, np.zeros_like(x3)], axis=2), p,
                         np.concatenate([w_sum.reshape(p * p, 3, d),
                                         np.zeros((p * p, 3, d))], axis=1).reshape(-1, d),
                         b)
    assert np.allclose(direct, folded, atol=1e-12)


def test_patch_embed_linearity(rng):
    p = 4
    x = rng.normal(size=(8, 8, 6))
    w = rng.normal(size=(p * p * 6, 5))
    b = rng.normal(size=5)
    alpha = 2.75
    lhs = patch_embed(alpha * x, p, w, b)
    rhs = alpha * (patch_embed(x, p, w, b) - b) + b
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_patch_embed_indivisible_extent(rng):
    with pytest.raises(DimensionError):
        patch_embed(np.zeros((9, 8, 6)), 4, rng.normal(size=(96, 5)), np.zeros(5))


# ---------------------------------------------------------------- assembly

def _embedder(cfg):
    store = ParamStore()
    frozen = Scope(store, "embed", False, make_rng(0, "emb-frozen"))
    train = Scope(store, "embed", True, make_rng(0, "emb-train"))
    return Embedder(frozen, train, cfg), store


def test_assemble_counts_and_order():
    # sizes chosen to give the reference assembly: 16 + 49 + 49 + 196 + 0 = 310
    cfg = Config(image_size=112, template_size=56, patch=8, backbone_dim=16,
                 backbone_heads=2, mcp_n_tokens=16)
    emb, _ = _embedder(cfg)
    rng = make_rng(1, "asm")
    mem = rng.normal(size=(16, 16))
    tmpl = rng.normal(size=(49, 16))
    search = rng.normal(size=(196, 16))
    seq, _ = emb.assemble(mem, [tmpl, tmpl], search, None)
    assert seq.tokens.shape == (310, 16)
    tags = seq.segments
    assert (tags[:16] == SEG_MEMORY).all()
    assert (tags[16:114] == SEG_TEMPLATE).all()
    assert (tags[114:310] == SEG_SEARCH).all()


def test_assemble_zero_embeddings_identity(tiny_cfg):
    emb, store = _embedder(tiny_cfg)
    for p in store:
        if not p.name.startswith("embed.text"):
            p.value[...] = 0.0
    rng = make_rng(2, "asm")
    mem = rng.normal(size=(4, 16))
    tmpl = rng.normal(size=(tiny_cfg.n_template_tokens, 16))
    search = rng.normal(size=(tiny_cfg.n_search_tokens, 16))
    seq, _ = emb.assemble(mem, [tmpl], search, None)
    assert np.array_equal(seq.tokens, np.concatenate([mem, tmpl, search]))


def test_assemble_text_appends_one(tiny_cfg):
    emb, _ = _embedder(tiny_cfg)
    rng = make_rng(3, "asm")
    tmpl = rng.normal(size=(tiny_cfg.n_template_tokens, 16))
    search = rng.normal(size=(tiny_cfg.n_search_tokens, 16))
    base, _ = emb.assemble(None, [tmpl], search, None)
    with_text, _ = emb.assemble(None, [tmpl], search, rng.normal(size=16))
    assert with_text.tokens.shape[0] == base.tokens.shape[0] + 1
    assert with_text.segments[-1] == SEG_TEXT


def test_assemble_preserves_values_up_to_embeddings(tiny_cfg):
    emb, _ = _embedder(tiny_cfg)
    rng = make_rng(4, "asm")
    mem = rng.normal(size=(4, 16))
    tmpl = rng.normal(size=(tiny_cfg.n_template_tokens, 16))
    search = rng.normal(size=(tiny_cfg.n_search_tokens, 16))
    seq, _ = emb.assemble(mem, [tmpl], search, None)
    t = emb.type_emb.value
    assert np.allclose(seq.slice_of(SEG_MEMORY) - t[SEG_MEMORY], mem)
    assert np.allclose(
        seq.slice_of(SEG_TEMPLATE) - t[SEG_TEMPLATE] - emb.pos_template.value, tmpl)
    assert np.allclose(
        seq.slice_of(SEG_SEARCH) - t[SEG_SEARCH] - emb.pos_search.value, search)


def test_assemble_rejects_wrong_template_size(tiny_cfg):
    emb, _ = _embedder(tiny_cfg)
    rng = make_rng(5, "asm")
    search = rng.normal(size=(tiny_cfg.n_search_tokens, 16))
    with pytest.raises(ValidationError):
        emb.assemble(None, [rng.normal(size=(3, 16))], search, None)


# -------------------------------------------------------------- frame files

def test_frame_file_roundtrip(tmp_path, rng):
    aux = rng.uniform(0, 255, size=(8, 6, 3))
    frame = MultiModalFrame(rgb=rng.uniform(0, 255, size=(8, 6, 3)), aux=aux,
                            modality=RGBD)
    path = tmp_path / "f.bin"
    write_frame_file(path, frame, 17)
    back, index = read_frame_file(path)
    assert index == 17
    assert back.modality == RGBD
    # payload is float32; compare at that precision
    assert np.allclose(back.rgb, frame.rgb.astype(np.float32))
    assert np.allclose(back.aux, aux.astype(np.float32))


def test_frame_file_rgb_only(tmp_path, rng):
    frame = _rgb_frame(rng, modality=RGBL)
    path = tmp_path / "f.bin"
    write_frame_file(path, frame, 0)
    back, _ = read_frame_file(path)
    assert back.aux is None
    assert back.modality == RGBL
