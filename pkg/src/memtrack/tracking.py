"""Search-region cropping and the per-sequence tracking loop.

Standard single-object protocol: the ground-truth box of frame 0 seeds
two template crops and a bootstrap pass whose search-region output fills
the memory bank and primes the dynamic states; every later frame crops
around the previous prediction, compresses the bank into prompt tokens,
runs the fused forward, decodes a box and then advances bank and states
from the new search-region output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config
from .embedding import MultiModalFrame, build_six_channel, normalize_pixels, patch_embed
from .model import TrackerModel
from .synthetic import SyntheticSequence

MIN_SIDE_PX = 8.0


def crop_resize(image: np.ndarray, cx: float, cy: float, side: float, out_size: int) -> np.ndarray:
    """Bilinear crop of a square window (zero-padded outside) to out_size."""
    h, w, c = image.shape
    xs = cx - side / 2 + (np.arange(out_size) + 0.5) * side / out_size - 0.5
    ys = cy - side / 2 + (np.arange(out_size) + 0.5) * side / out_size - 0.5
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx = xs - x0
    fy = ys - y0

    def gather(yi, xi):
        vy = (yi >= 0) & (yi < h)
        vx = (xi >= 0) & (xi < w)
        yy = np.clip(yi, 0, h - 1)
        xx = np.clip(xi, 0, w - 1)
        return image[yy[:, None], xx[None, :]] * vy[:, None, None] * vx[None, :, None]

    g00 = gather(y0, x0)
    g01 = gather(y0, x0 + 1)
    g10 = gather(y0 + 1, x0)
    g11 = gather(y0 + 1, x0 + 1)
    top = g00 * (1 - fx)[None, :, None] + g01 * fx[None, :, None]
    bot = g10 * (1 - fx)[None, :, None] + g11 * fx[None, :, None]
    return np.clip(top * (1 - fy)[:, None, None] + bot * fy[:, None, None], 0, 255)


def crop_frame(frame: MultiModalFrame, cx: float, cy: float, side: float,
               out_size: int) -> MultiModalFrame:
    six = build_six_channel(frame)
    patch = crop_resize(six, cx, cy, side, out_size)
    if frame.aux is not None:
        return MultiModalFrame(rgb=patch[..., :3], aux=patch[..., 3:],
                               modality=frame.modality, text=frame.text)
    return MultiModalFrame(rgb=patch[..., :3], aux=None,
                           modality=frame.modality, text=frame.text)


def box_to_crop_coords(box_px: np.ndarray, x0: float, y0: float, side: float) -> np.ndarray:
    cx, cy, w, h = box_px
    return np.array([(cx - x0) / side, (cy - y0) / side, w / side, h / side])


def box_from_crop_coords(box_crop: np.ndarray, x0: float, y0: float, side: float) -> np.ndarray:
    cx, cy, w, h = box_crop
    return np.array([x0 + cx * side, y0 + cy * side, w * side, h * side])


def crop_side_for(box_px: np.ndarray, factor: float) -> float:
    return max(factor * float(np.sqrt(box_px[2] * box_px[3])), MIN_SIDE_PX)


@dataclass
class TrackerRun:
    sequence_id: str
    scenario: str
    modality: int
    pred_boxes: np.ndarray               # [T, 4] normalized, frame 0 = gt
    gt_boxes: np.ndarray                 # [T, 4]
    ious: np.ndarray                     # [T]; frame 0 is the init frame
    bank_trace: list[list[int]] = field(default_factory=list)
    state_norms: list[list[float]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "sequence_id": self.sequence_id,
                "scenario": self.scenario,
                "modality": self.modality,
                "pred_boxes": self.pred_boxes.tolist(),
                "gt_boxes": self.gt_boxes.tolist(),
                "ious": self.ious.tolist(),
                "bank_trace": self.bank_trace,
                "state_norms": self.state_norms,
            },
            indent=None,
            separators=(",", ":"),
        )

    @staticmethod
    def from_json(text: str) -> "TrackerRun":
        d = json.loads(text)
        return TrackerRun(
            sequence_id=d["sequence_id"],
            scenario=d["scenario"],
            modality=d["modality"],
            pred_boxes=np.array(d["pred_boxes"]),
            gt_boxes=np.array(d["gt_boxes"]),
            ious=np.array(d["ious"]),
            bank_trace=d["bank_trace"],
            state_norms=d["state_norms"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @staticmethod
    def load(path: str | Path) -> "TrackerRun":
        return TrackerRun.from_json(Path(path).read_text())


def iou_xywh(a: np.ndarray, b: np.ndarray) -> float:
    ax1, ay1 = a[0] - a[2] / 2, a[1] - a[3] / 2
    ax2, ay2 = a[0] + a[2] / 2, a[1] + a[3] / 2
    bx1, by1 = b[0] - b[2] / 2, b[1] - b[3] / 2
    bx2, by2 = b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return float(inter / union) if union > 0 else 0.0


class Tracker:
    """Stateful per-sequence tracker around a TrackerModel.

    `bank_policy` overrides the bank retention policy at inference time
    (the policy is runtime behavior, not a trained quantity).
    """

    def __init__(self, model: TrackerModel, bank_policy: str | None = None):
        self.model = model
        self.cfg: Config = model.cfg
        self.bank_policy = bank_policy

    def embed_crop(self, frame: MultiModalFrame, cx, cy, side, out_size) -> np.ndarray:
        cropped = crop_frame(frame, cx, cy, side, out_size)
        six = normalize_pixels(build_six_channel(cropped))
        return patch_embed(six, self.cfg.patch, self.model.embedder.patch_w.value,
                           self.model.embedder.patch_b.value)

    def track(self, seq: SyntheticSequence) -> TrackerRun:
        cfg = self.cfg
        native = seq.frames[0].rgb.shape[0]
        gt_px = seq.gt_boxes * native
        t_total = len(seq)

        bank = self.model.new_bank(policy=self.bank_policy) if cfg.mcp_enabled else None
        states = self.model.new_dsf_states()

        # templates: two identical initial-frame crops at the template factor
        box0 = gt_px[0]
        t_side = crop_side_for(box0, cfg.crop_factor_template)
        template = self.embed_crop(seq.frames[0], box0[0], box0[1], t_side,
                                   cfg.template_size)
        templates = [template, template.copy()]
        text_vec = seq.text

        # bootstrap pass on the ground-truth-centered search region of frame 0
        s_side = crop_side_for(box0, cfg.crop_factor_search)
        search0 = self.embed_crop(seq.frames[0], box0[0], box0[1], s_side, cfg.image_size)
        ff = self.model.forward_frame(templates, search0, text_vec, bank, states,
                                      use_memory=False)
        if bank is not None:
            bank.insert(0, ff.o_s.copy())
        states, _ = self.model.update_states(ff, states)

        pred_boxes = np.empty_like(gt_px)
        pred_boxes[0] = box0
        ious = np.empty(t_total)
        ious[0] = 1.0
        bank_trace: list[list[int]] = [bank.selected_indices() if bank else []]
        state_norms: list[list[float]] = [
            [float(np.linalg.norm(s.h)) if s.h is not None else 0.0 for s in states]
        ]

        prev_box = box0.copy()
        for t in range(1, t_total):
            side = crop_side_for(prev_box, cfg.crop_factor_search)
            x0 = prev_box[0] - side / 2
            y0 = prev_box[1] - side / 2
            search = self.embed_crop(seq.frames[t], prev_box[0], prev_box[1], side,
                                     cfg.image_size)
            ff = self.model.forward_frame(templates, search, text_vec, bank, states)
            box_pred, _ = self.model.heads.decode(ff.raw)
            box_px = box_from_crop_coords(box_pred.box, x0, y0, side)
            # damped, clamped size update: raw per-frame scale estimates
            # otherwise compound through the crop side and spiral
            clamp = cfg.track_scale_clamp
            damp = cfg.track_size_damping
            for k in (2, 3):
                est = np.clip(box_px[k], prev_box[k] / clamp, prev_box[k] * clamp)
                box_px[k] = damp * prev_box[k] + (1.0 - damp) * est
            box_px[0] = np.clip(box_px[0], 0, native)
            box_px[1] = np.clip(box_px[1], 0, native)
            box_px[2] = np.clip(box_px[2], MIN_SIDE_PX / 2, native)
            box_px[3] = np.clip(box_px[3], MIN_SIDE_PX / 2, native)

            pred_boxes[t] = box_px
            ious[t] = iou_xywh(box_px, gt_px[t])

            states, _ = self.model.update_states(ff, states)
            if bank is not None:
                bank.insert(t, ff.o_s.copy())
            bank_trace.append(bank.selected_indices() if bank else [])
            state_norms.append(
                [float(np.linalg.norm(s.h)) if s.h is not None else 0.0 for s in states]
            )
            prev_box = box_px

        return TrackerRun(
            sequence_id=seq.sequence_id,
            scenario=seq.scenario,
            modality=seq.modality,
            pred_boxes=pred_boxes / native,
            gt_boxes=seq.gt_boxes.copy(),
            ious=ious,
            bank_trace=bank_trace,
            state_norms=state_norms,
        )
