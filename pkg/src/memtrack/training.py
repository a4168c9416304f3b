"""Parameter-efficient trainer.

Each step samples a 7-frame clip (2 template frames, 5 search frames)
from a synthetic sequence, runs a bootstrap pass on the later template
frame to seed the clip-local memory bank and dynamic states, then runs
the search frames with carried state and accumulates the weighted loss.
The reverse pass walks frames newest-first, threading gradients through
the dynamic-state recurrences (backpropagation through time) and, when
enabled, through the stored memory-bank features into earlier frames.

Only the trainable partition is ever stepped; the frozen partition hash
is the invariant the test suite pins.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config
from .model import TrackerModel
from .params import ParamTensor
from .rng import make_rng
from .synthetic import SyntheticSequence, training_set
from .tracking import Tracker, box_to_crop_coords, crop_side_for


class TrainingAbort(RuntimeError):
    pass


class AdamW:
    """Decoupled-weight-decay adaptive moments."""

    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: list[ParamTensor]) -> None:
        self.t += 1
        for p in params:
            if not p.trainable or p.grad is None:
                continue
            g = p.grad
            m = self.m.setdefault(p.name, np.zeros_like(p.value))
            v = self.v.setdefault(p.name, np.zeros_like(p.value))
            m += (1 - self.b1) * (g - m)
            v += (1 - self.b2) * (g * g - v)
            mhat = m / (1 - self.b1**self.t)
            vhat = v / (1 - self.b2**self.t)
            p.value -= self.lr * (mhat / (np.sqrt(vhat) + self.eps) + self.wd * p.value)


@dataclass
class ClipFrame:
    tokens: np.ndarray
    gt_box: np.ndarray


@dataclass
class Clip:
    templates: list[np.ndarray]
    boot: ClipFrame
    searches: list[ClipFrame]
    text_vec: np.ndarray | None
    modality: int


def sample_clip(seq: SyntheticSequence, tracker: Tracker, cfg: Config, rng) -> Clip:
    """2 template frames then `clip_search_frames` search frames with gaps.

    Template-to-search gaps are drawn wide so the clip exposes appearance
    drift; search-to-search gaps stay short so state dynamics are
    learnable.
    """
    k = cfg.train_clip_search_frames
    t_gap = int(rng.integers(1, 4))
    lead_gap = int(rng.integers(1, cfg.train_template_gap_max + 1))
    s_gaps = rng.integers(1, cfg.train_search_gap_max + 1, size=k - 1)
    span = t_gap + lead_gap + int(s_gaps.sum())
    t_max = len(seq) - span - 1
    t1 = int(rng.integers(0, max(t_max, 1)))
    t2 = t1 + t_gap
    s_idx = [t2 + lead_gap]
    for g in s_gaps:
        s_idx.append(s_idx[-1] + int(g))

    native = seq.frames[0].rgb.shape[0]
    gt_px = seq.gt_boxes * native

    def template_tokens(t: int) -> np.ndarray:
        box = gt_px[t]
        side = crop_side_for(box, cfg.crop_factor_template)
        return tracker.embed_crop(seq.frames[t], box[0], box[1], side, cfg.template_size)

    def search_frame(t: int, jitter: bool) -> ClipFrame:
        box = gt_px[t]
        side = crop_side_for(box, cfg.crop_factor_search)
        cx, cy = box[0], box[1]
        if jitter:
            j = cfg.train_jitter
            side = side * float(np.exp(rng.uniform(-cfg.train_scale_jitter,
                                                   cfg.train_scale_jitter)))
            cx += float(rng.uniform(-j, j)) * side
            cy += float(rng.uniform(-j, j)) * side
        x0, y0 = cx - side / 2, cy - side / 2
        gt_crop = box_to_crop_coords(box, x0, y0, side)
        lo = gt_crop[:2] - gt_crop[2:] / 2
        hi = gt_crop[:2] + gt_crop[2:] / 2
        if lo.min() < 0 or hi.max() > 1:
            cx, cy = box[0], box[1]
            x0, y0 = cx - side / 2, cy - side / 2
            gt_crop = box_to_crop_coords(box, x0, y0, side)
        tokens = tracker.embed_crop(seq.frames[t], cx, cy, side, cfg.image_size)
        return ClipFrame(tokens=tokens, gt_box=gt_crop)

    return Clip(
        templates=[template_tokens(t1), template_tokens(t2)],
        boot=search_frame(t2, jitter=False),
        searches=[search_frame(t, jitter=True) for t in s_idx],
        text_vec=seq.text,
        modality=seq.modality,
    )


def _zeros_if_scalar(g, like: np.ndarray) -> np.ndarray:
    return g if isinstance(g, np.ndarray) else np.zeros_like(like)


def train_step(model: TrackerModel, clip: Clip, opt: AdamW) -> dict:
    """One forward/backward/update over a clip. Returns loss components."""
    cfg = model.cfg
    k_frames = len(clip.searches)
    n_dsf = len(model.dsfs)

    bank = model.new_bank() if cfg.mcp_enabled else None
    states = model.new_dsf_states()

    ffs, ds_caches, lcaches = [], [], []
    comps_sum = {"giou": 0.0, "l1": 0.0, "focal": 0.0, "ce": 0.0}

    ff = model.forward_frame(clip.templates, clip.boot.tokens, clip.text_vec,
                             None, states, use_memory=False)
    if bank is not None:
        bank.insert(0, ff.o_s.copy())
    states, caches = model.update_states(ff, states)
    ffs.append(ff)
    ds_caches.append(caches)
    lcaches.append(None)

    total = 0.0
    for j, sf in enumerate(clip.searches, start=1):
        ff = model.forward_frame(clip.templates, sf.tokens, clip.text_vec, bank, states)
        loss, comps, lcache = model.heads.total_loss(ff.raw, sf.gt_box, clip.modality)
        total += loss
        for key in comps_sum:
            comps_sum[key] += comps[key] / k_frames
        states, caches = model.update_states(ff, states)
        if bank is not None:
            bank.insert(j, ff.o_s.copy())
        ffs.append(ff)
        ds_caches.append(caches)
        lcaches.append(lcache)
    total /= k_frames
    if not np.isfinite(total):
        raise TrainingAbort(f"non-finite loss {total}")

    # reverse pass, newest frame first
    model.store.zero_grads()
    scale = 1.0 / k_frames
    dh_next = [None] * n_dsf          # grads w.r.t. h after frame j
    df_from_next = [0.0] * n_dsf      # grads w.r.t. F consumed by frame j+1
    bank_grads: dict[int, np.ndarray] = {}

    for j in range(k_frames, -1, -1):
        ff = ffs[j]
        d_os = None
        d_o_extra = None
        stage_grads: dict[int, np.ndarray] = {}

        # backward of the state update performed after frame j
        if n_dsf and j < k_frames:
            for i, m in enumerate(model.dsfs):
                cache = ds_caches[j][i]
                if cache is None:
                    continue  # update skipped at this frame; chain dh through
                df = df_from_next[i]
                dh = dh_next[i]
                if not isinstance(df, np.ndarray) and dh is None:
                    dh_next[i] = None
                    continue
                gf = _zeros_if_scalar(df, cache["features"])
                d_src, dh_prev = m.dynamic_state_backward(gf, dh, cache)
                dh_next[i] = dh_prev
                if cfg.dsf_source == "final":
                    d_os = d_src if d_os is None else d_os + d_src
                elif cfg.dsf_source == "sequence":
                    d_o_extra = d_src if d_o_extra is None else d_o_extra + d_src
                else:  # stage_input
                    inj = np.zeros_like(ff.o)
                    inj[ff.search_idx] = d_src
                    si = stage_grads.get(i)
                    stage_grads[i] = inj if si is None else si + inj

        if lcaches[j] is not None:
            d_head = model.head_loss_backward(ff, lcaches[j]) * scale
            d_os = d_head if d_os is None else d_os + d_head
        if j in bank_grads:
            d_os = bank_grads.pop(j) if d_os is None else d_os + bank_grads.pop(j)

        if d_os is None and d_o_extra is None and not stage_grads:
            df_from_next = [0.0] * n_dsf
            continue

        fb = model.backward_frame(ff, d_os, d_o_extra, stage_grads or None,
                                  want_bank_grads=cfg.train_bank_backprop)
        df_from_next = fb.df_per_module
        for idx, g in fb.bank_feature_grads.items():
            bank_grads[idx] = bank_grads.get(idx, 0.0) + g

    opt.step(list(model.store))
    comps_sum["total"] = float(total)
    return comps_sum


@dataclass
class TrainResult:
    model: TrackerModel
    rows: list[dict] = field(default_factory=list)
    frozen_hash_before: str = ""
    frozen_hash_after: str = ""


def train(cfg: Config, dataset: list[SyntheticSequence] | None = None,
          diagnostics_path: str | Path | None = None,
          progress: bool = False) -> TrainResult:
    model = TrackerModel(cfg)
    tracker = Tracker(model)
    if dataset is None:
        dataset = training_set(cfg.data_sequences, cfg.data_seq_len, cfg.seed)
    rng = make_rng(cfg.seed, "train")
    opt = AdamW(cfg.train_lr, weight_decay=cfg.train_weight_decay)
    result = TrainResult(model, frozen_hash_before=model.store.partition_hash(False))

    for step in range(cfg.train_steps):
        seq = dataset[int(rng.integers(0, len(dataset)))]
        clip = sample_clip(seq, tracker, cfg, rng)
        try:
            comps = train_step(model, clip, opt)
        except TrainingAbort as exc:
            dump = {
                "step": step,
                "error": str(exc),
                "param_norms": {p.name: float(np.linalg.norm(p.value))
                                for p in model.store},
            }
            path = Path(diagnostics_path or "train_abort_dump.json")
            path.write_text(json.dumps(dump, indent=2))
            raise TrainingAbort(f"aborted at step {step}; diagnostics in {path}") from exc
        comps["step"] = step
        result.rows.append(comps)
        if progress and step % max(cfg.train_log_every, 1) == 0:
            print(f"step {step:5d} total {comps['total']:.4f} "
                  f"giou {comps['giou']:.4f} l1 {comps['l1']:.4f} "
                  f"focal {comps['focal']:.4f} ce {comps['ce']:.4f}")
    result.frozen_hash_after = model.store.partition_hash(False)
    return result


def loss_csv(rows: list[dict]) -> str:
    lines = ["step,total,giou,l1,focal,ce"]
    for r in rows:
        lines.append(
            f"{r['step']},{r['total']:.6f},{r['giou']:.6f},{r['l1']:.6f},"
            f"{r['focal']:.6f},{r['ce']:.6f}"
        )
    return "\n".join(lines) + "\n"
