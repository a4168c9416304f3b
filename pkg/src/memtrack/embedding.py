"""Unified modality embedding.

Every input modality is normalized to a 6-channel raster: RGB in channels
0-2 and the auxiliary map (depth/thermal/event replicated to 3 channels)
in 3-5, with RGB duplicated when no auxiliary exists. Patches are linearly
projected to model width, then assembled with memory / template / search /
text segments plus positional and token-type embeddings.

The text encoder is a stub: sequences carry a fixed per-description vector
which a small trainable linear layer projects to model width. Everything
else in this module is part of the frozen partition.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ops
from .params import DimensionError, Scope

RGB, RGBD, RGBT, RGBE, RGBL = range(5)
MODALITY_NAMES = ("rgb", "rgbd", "rgbt", "rgbe", "rgbl")
AUX_MODALITIES = (RGBD, RGBT, RGBE)

SEG_MEMORY, SEG_TEMPLATE, SEG_SEARCH, SEG_TEXT = range(4)
SEG_NAMES = ("memory", "template", "search", "text")


class ValidationError(ValueError):
    pass


@dataclass
class MultiModalFrame:
    rgb: np.ndarray                    # [H, W, 3] in [0, 255]
    aux: np.ndarray | None             # [H, W, 3] in [0, 255], present iff DTE modality
    modality: int
    text: np.ndarray | None = None     # fixed-dim stub vector for RGBL
    visibility: float = 1.0            # fraction of the target left unoccluded

    def validate(self) -> None:
        if (self.aux is not None) != (self.modality in AUX_MODALITIES):
            raise ValidationError("aux channel must be present iff modality is RGB-D/T/E")
        for name, arr in (("rgb", self.rgb), ("aux", self.aux)):
            if arr is None:
                continue
            if arr.ndim != 3 or arr.shape[2] != 3:
                raise ValidationError(f"{name} must be [H, W, 3]")
            if arr.min() < 0 or arr.max() > 255:
                raise ValidationError(f"{name} pixel values outside [0, 255]")


def build_six_channel(frame: MultiModalFrame) -> np.ndarray:
    """[H, W, 6]: RGB then aux, duplicating RGB when aux is absent."""
    frame.validate()
    second = frame.aux if frame.aux is not None else frame.rgb
    return np.concatenate([frame.rgb, second], axis=2).astype(np.float64)


def normalize_pixels(x: np.ndarray) -> np.ndarray:
    """[0, 255] -> [-1, 1]."""
    return x / 127.5 - 1.0


def patch_embed(x: np.ndarray, patch: int, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Non-overlapping patch x channel flattening, then linear projection.

    x: [H, W, C] with H, W divisible by patch; w: [patch*patch*C, d].
    Patches are row-major; within a patch the layout is (dy, dx, channel).
    """
    h, wd, c = x.shape
    if h % patch or wd % patch:
        raise DimensionError(f"extents {h}x{wd} not divisible by patch {patch}")
    gh, gw = h // patch, wd // patch
    flat = (
        x.reshape(gh, patch, gw, patch, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(gh * gw, patch * patch * c)
    )
    return ops.linear(flat, w, b)


# ------------------------------------------------------------ frame files

_HEADER = struct.Struct("<5i")


def write_frame_file(path: str | Path, frame: MultiModalFrame, frame_index: int) -> None:
    """Flat binary: five little-endian int32 (H, W, C, modality, index), then f32 pixels."""
    six = frame.aux is not None
    data = np.concatenate([frame.rgb, frame.aux], axis=2) if six else frame.rgb
    h, w, c = data.shape
    payload = np.ascontiguousarray(data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(h, w, c, frame.modality, frame_index))
        fh.write(payload.tobytes())


def read_frame_file(path: str | Path) -> tuple[MultiModalFrame, int]:
    raw = Path(path).read_bytes()
    h, w, c, modality, index = _HEADER.unpack_from(raw)
    pixels = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    if pixels.size != h * w * c:
        raise ValidationError(f"frame file {path}: payload size mismatch")
    data = pixels.reshape(h, w, c)
    if c == 6:
        frame = MultiModalFrame(rgb=data[..., :3], aux=data[..., 3:], modality=modality)
    elif c == 3:
        frame = MultiModalFrame(rgb=data, aux=None, modality=modality)
    else:
        raise ValidationError(f"frame file {path}: unsupported channel count {c}")
    frame.validate()
    return frame, index


# --------------------------------------------------------- token sequence

@dataclass
class TokenSequence:
    tokens: np.ndarray          # [N, d]
    segments: np.ndarray        # [N] int8 segment tags, in declared order
    frame_index: int = 0

    def slice_of(self, seg: int) -> np.ndarray:
        return self.tokens[self.segments == seg]

    def count_of(self, seg: int) -> int:
        return int((self.segments == seg).sum())


class Embedder:
    """Owns patch projection, positional/type tables and the text stub."""

    def __init__(self, frozen: Scope, trainable: Scope, cfg):
        d = cfg.backbone_dim
        in_dim = cfg.patch * cfg.patch * 6
        self.cfg = cfg
        self.patch_w = frozen.xavier("patch.w", in_dim, d)
        self.patch_b = frozen.zeros("patch.b", d)
        self.pos_template = frozen.normal("pos.template", (cfg.n_template_tokens, d))
        self.pos_search = frozen.normal("pos.search", (cfg.n_search_tokens, d))
        self.type_emb = frozen.normal("type", (4, d))
        self.text_w = trainable.xavier("text.w", cfg.text_dim, d)
        self.text_b = trainable.zeros("text.b", d)

    def frame_tokens(self, frame: MultiModalFrame, patch: int | None = None) -> np.ndarray:
        six = normalize_pixels(build_six_channel(frame))
        return patch_embed(six, patch or self.cfg.patch, self.patch_w.value, self.patch_b.value)

    def assemble(
        self,
        mem_tokens: np.ndarray | None,
        templates: list[np.ndarray],
        search: np.ndarray,
        text_vec: np.ndarray | None,
    ) -> tuple[TokenSequence, dict]:
        """Concatenate [memory | templates | search | text?] with embeddings.

        Memory tokens receive only their type embedding (they carry no
        spatial position); template and search tokens get their learned 2-D
        positional tables plus type embeddings; the text token is projected
        by the trainable stub layer.
        """
        parts, tags = [], []
        if mem_tokens is not None:
            parts.append(mem_tokens + self.type_emb.value[SEG_MEMORY])
            tags.append(np.full(len(mem_tokens), SEG_MEMORY, dtype=np.int8))
        for t in templates:
            if t.shape[0] != self.pos_template.value.shape[0]:
                raise ValidationError(
                    f"template block has {t.shape[0]} tokens, expected "
                    f"{self.pos_template.value.shape[0]}"
                )
            parts.append(t + self.pos_template.value + self.type_emb.value[SEG_TEMPLATE])
            tags.append(np.full(t.shape[0], SEG_TEMPLATE, dtype=np.int8))
        if search.shape[0] != self.pos_search.value.shape[0]:
            raise ValidationError(
                f"search block has {search.shape[0]} tokens, expected "
                f"{self.pos_search.value.shape[0]}"
            )
        parts.append(search + self.pos_search.value + self.type_emb.value[SEG_SEARCH])
        tags.append(np.full(search.shape[0], SEG_SEARCH, dtype=np.int8))
        if text_vec is not None:
            tok = ops.linear(text_vec[None, :], self.text_w.value, self.text_b.value)
            parts.append(tok + self.type_emb.value[SEG_TEXT])
            tags.append(np.full(1, SEG_TEXT, dtype=np.int8))
        seq = TokenSequence(np.concatenate(parts, axis=0), np.concatenate(tags))
        cache = {
            "n_mem": 0 if mem_tokens is None else len(mem_tokens),
            "text_vec": text_vec,
        }
        return seq, cache

    def assemble_backward(self, g_tokens: np.ndarray, cache: dict) -> np.ndarray | None:
        """Routes token grads: returns d(mem_tokens); accumulates text-stub grads.

        Template/search grads stop here: everything upstream of them is in
        the frozen partition.
        """
        n_mem = cache["n_mem"]
        if cache["text_vec"] is not None:
            g_text = g_tokens[-1:, :]
            _, dw, db = ops.linear_backward(g_text, cache["text_vec"][None, :], self.text_w.value)
            self.text_w.add_grad(dw)
            self.text_b.add_grad(db)
        return g_tokens[:n_mem] if n_mem else None
