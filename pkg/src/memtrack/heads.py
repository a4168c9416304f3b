"""Center-based box prediction, modality classification and the training loss.

The box head reads the search-region tokens as a g x g grid and emits
per-cell score / offset / size maps through small per-cell linear stacks
(translation-equivariant by construction). Decoding takes the score
argmax (ties to the smallest row-major index), adds the cell's sigmoid
offset and sizes, and clamps into the unit square.

Training combines generalized-IoU and L1 on the decoded box, a
penalty-reduced focal loss on the score map against a Gaussian center
target, and cross-entropy on the modality logits, weighted 2 / 5 / 1 / 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .embedding import MODALITY_NAMES
from .params import DimensionError, Scope

FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0
W_GIOU, W_L1, W_FOCAL, W_CE = 2.0, 5.0, 1.0, 1.0
_P_EPS = 1e-12


class ValidationError(ValueError):
    pass


@dataclass
class BoxPrediction:
    score_map: np.ndarray     # [g, g] probabilities
    offset: np.ndarray        # [g, g, 2] (x, y) in cell units
    size: np.ndarray          # [g, g, 2] (w, h) normalized
    box: np.ndarray           # (cx, cy, w, h), clamped to the unit square
    cell: tuple[int, int]     # argmax (row, col)


@dataclass
class ModalityPrediction:
    logits: np.ndarray        # [5]

    @property
    def name(self) -> str:
        return MODALITY_NAMES[int(np.argmax(self.logits))]


def validate_gt_box(box) -> np.ndarray:
    box = np.asarray(box, dtype=np.float64)
    cx, cy, w, h = box
    if w <= 0 or h <= 0:
        raise ValidationError(f"ground-truth box has non-positive size: {box}")
    if cx - w / 2 < -1e-9 or cy - h / 2 < -1e-9 or cx + w / 2 > 1 + 1e-9 or cy + h / 2 > 1 + 1e-9:
        raise ValidationError(f"ground-truth box outside the unit square: {box}")
    return box


# ------------------------------------------------------------------ GIoU

def giou_loss(pred: np.ndarray, gt: np.ndarray):
    """1 - GIoU for center-form boxes. Returns (loss, d loss / d pred)."""
    pcx, pcy, pw, ph = pred
    gcx, gcy, gw, gh = gt
    px1, px2 = pcx - pw / 2, pcx + pw / 2
    py1, py2 = pcy - ph / 2, pcy + ph / 2
    gx1, gx2 = gcx - gw / 2, gcx + gw / 2
    gy1, gy2 = gcy - gh / 2, gcy + gh / 2

    ix1, ix2 = max(px1, gx1), min(px2, gx2)
    iy1, iy2 = max(py1, gy1), min(py2, gy2)
    iw, ih = max(ix2 - ix1, 0.0), max(iy2 - iy1, 0.0)
    inter = iw * ih
    area_p = pw * ph
    union = area_p + gw * gh - inter
    cw = max(px2, gx2) - min(px1, gx1)
    ch = max(py2, gy2) - min(py1, gy1)
    enclose = cw * ch
    iou = inter / union
    loss = 2.0 - iou - union / enclose

    # chain rule through (inter, area_p, enclose); union = area_p + area_g - inter
    dl_dinter = -(union + inter) / union**2 + 1.0 / enclose
    dl_darea = inter / union**2 - 1.0 / enclose
    dl_dencl = union / enclose**2

    d = np.zeros(4)
    if iw > 0 and ih > 0:
        # d inter / d pred corners, active only when the pred side binds
        dix1 = -ih if px1 > gx1 else 0.0
        dix2 = ih if px2 < gx2 else 0.0
        diy1 = -iw if py1 > gy1 else 0.0
        diy2 = iw if py2 < gy2 else 0.0
        d += dl_dinter * np.array(
            [dix1 + dix2, diy1 + diy2, 0.5 * (dix2 - dix1), 0.5 * (diy2 - diy1)]
        )
    d += dl_darea * np.array([0.0, 0.0, ph, pw])
    dcx1 = -ch if px1 < gx1 else 0.0
    dcx2 = ch if px2 > gx2 else 0.0
    dcy1 = -cw if py1 < gy1 else 0.0
    dcy2 = cw if py2 > gy2 else 0.0
    d += dl_dencl * np.array(
        [dcx1 + dcx2, dcy1 + dcy2, 0.5 * (dcx2 - dcx1), 0.5 * (dcy2 - dcy1)]
    )
    return float(loss), d


# ------------------------------------------------------------ focal loss

def gaussian_center_target(gt_box: np.ndarray, grid: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Gaussian bump around the gt center cell, exactly 1 at the center.

    Sigma is box size in cells / 6, floored at one cell.
    """
    cx, cy, w, h = gt_box
    col = min(int(cx * grid), grid - 1)
    row = min(int(cy * grid), grid - 1)
    sx = max(w * grid / 6.0, 1.0)
    sy = max(h * grid / 6.0, 1.0)
    cols = np.arange(grid)
    rows = np.arange(grid)
    y = np.exp(
        -((cols[None, :] - col) ** 2) / (2 * sx**2)
        - ((rows[:, None] - row) ** 2) / (2 * sy**2)
    )
    y[row, col] = 1.0
    return y, (row, col)


def focal_loss(p: np.ndarray, target: np.ndarray):
    """Penalty-reduced focal loss on probability map p. Returns (loss, dloss/dp)."""
    p = np.clip(p, _P_EPS, 1.0 - _P_EPS)
    pos = target >= 1.0
    n_pos = max(int(pos.sum()), 1)
    pos_term = np.where(pos, (1 - p) ** FOCAL_ALPHA * np.log(p), 0.0)
    neg_term = np.where(
        ~pos, (1 - target) ** FOCAL_BETA * p**FOCAL_ALPHA * np.log(1 - p), 0.0
    )
    loss = -(pos_term.sum() + neg_term.sum()) / n_pos
    dpos = np.where(
        pos, -FOCAL_ALPHA * (1 - p) ** (FOCAL_ALPHA - 1) * np.log(p) + (1 - p) ** FOCAL_ALPHA / p, 0.0
    )
    dneg = np.where(
        ~pos,
        (1 - target) ** FOCAL_BETA
        * (FOCAL_ALPHA * p ** (FOCAL_ALPHA - 1) * np.log(1 - p) - p**FOCAL_ALPHA / (1 - p)),
        0.0,
    )
    grad = -(dpos + dneg) / n_pos
    return float(loss), grad


def cross_entropy(logits: np.ndarray, label: int):
    ls = ops.log_softmax(logits)
    loss = -ls[label]
    grad = np.exp(ls)
    grad[label] -= 1.0
    return float(loss), grad


# ----------------------------------------------------------------- heads

class PredictionHeads:
    def __init__(self, scope: Scope, cfg):
        d = cfg.backbone_dim
        hidden = d
        self.cfg = cfg

        def stack(name: str, out_dim: int):
            s = scope.child(name)
            return {
                "w1": s.xavier("w1", d, hidden),
                "b1": s.zeros("b1", hidden),
                "w2": s.xavier("w2", hidden, out_dim),
                "b2": s.zeros("b2", out_dim),
            }

        self.score = stack("score", 1)
        self.offset = stack("offset", 2)
        self.size = stack("size", 2)
        self.cls = stack("modality", len(MODALITY_NAMES))

    # raw per-cell maps -------------------------------------------------
    def _stack_forward(self, p, x):
        pre = ops.linear(x, p["w1"].value, p["b1"].value)
        hid = ops.silu(pre)
        out = ops.linear(hid, p["w2"].value, p["b2"].value)
        return out, (x, pre, hid)

    def _stack_backward(self, p, g, cache):
        x, pre, hid = cache
        dhid, dw2, db2 = ops.linear_backward(g, hid, p["w2"].value)
        p["w2"].add_grad(dw2)
        p["b2"].add_grad(db2)
        dpre = ops.silu_backward(dhid, pre)
        dx, dw1, db1 = ops.linear_backward(dpre, x, p["w1"].value)
        p["w1"].add_grad(dw1)
        p["b1"].add_grad(db1)
        return dx

    def forward(self, o_s: np.ndarray):
        """Raw (pre-sigmoid) maps and modality logits from search tokens."""
        n, _ = o_s.shape
        grid = int(round(np.sqrt(n)))
        if grid * grid != n:
            raise DimensionError(f"search token count {n} is not a perfect square")
        score_raw, c_score = self._stack_forward(self.score, o_s)
        off_raw, c_off = self._stack_forward(self.offset, o_s)
        size_raw, c_size = self._stack_forward(self.size, o_s)
        pooled = ops.mean_rows(o_s)
        logits, c_cls = self._stack_forward(self.cls, pooled[None, :])
        raw = {
            "grid": grid,
            "score_raw": score_raw[:, 0],
            "off_raw": off_raw,
            "size_raw": size_raw,
            "logits": logits[0],
        }
        cache = {"c_score": c_score, "c_off": c_off, "c_size": c_size,
                 "c_cls": c_cls, "n": n, "grid": grid}
        return raw, cache

    # decoding ----------------------------------------------------------
    def decode(self, raw) -> tuple[BoxPrediction, ModalityPrediction]:
        g = raw["grid"]
        score = ops.sigmoid(raw["score_raw"]).reshape(g, g)
        offset = ops.sigmoid(raw["off_raw"]).reshape(g, g, 2)
        size = ops.sigmoid(raw["size_raw"]).reshape(g, g, 2)
        flat = int(np.argmax(score))  # ties -> smallest row-major index
        row, col = divmod(flat, g)
        cx = (col + offset[row, col, 0]) / g
        cy = (row + offset[row, col, 1]) / g
        w, h = size[row, col]
        x1 = np.clip(cx - w / 2, 0.0, 1.0)
        x2 = np.clip(cx + w / 2, 0.0, 1.0)
        y1 = np.clip(cy - h / 2, 0.0, 1.0)
        y2 = np.clip(cy + h / 2, 0.0, 1.0)
        box = np.array(
            [(x1 + x2) / 2, (y1 + y2) / 2, max(x2 - x1, 1e-4), max(y2 - y1, 1e-4)]
        )
        return (
            BoxPrediction(score, offset, size, box, (row, col)),
            ModalityPrediction(raw["logits"].copy()),
        )

    # loss ----------------------------------------------------------------
    def total_loss(self, raw, gt_box, gt_modality: int):
        """Weighted sum of GIoU, L1, focal and modality cross-entropy.

        Returns (total, components, loss_cache); the box regression terms
        read the offset/size cell selected by the score argmax.
        """
        gt_box = validate_gt_box(gt_box)
        g = raw["grid"]
        score_p = ops.sigmoid(raw["score_raw"]).reshape(g, g)
        flat = int(np.argmax(raw["score_raw"]))
        row, col = divmod(flat, g)
        off = ops.sigmoid(raw["off_raw"][flat])
        size = ops.sigmoid(raw["size_raw"][flat])
        pred_box = np.array(
            [(col + off[0]) / g, (row + off[1]) / g, size[0], size[1]]
        )

        l_giou, d_box_giou = giou_loss(pred_box, gt_box)
        diff = pred_box - gt_box
        l_l1 = float(np.abs(diff).mean())
        d_box_l1 = np.sign(diff) / 4.0
        target, _ = gaussian_center_target(gt_box, g)
        l_focal, d_score_p = focal_loss(score_p, target)
        l_ce, d_logits = cross_entropy(raw["logits"], gt_modality)

        total = W_GIOU * l_giou + W_L1 * l_l1 + W_FOCAL * l_focal + W_CE * l_ce
        comps = {"giou": l_giou, "l1": l_l1, "focal": l_focal, "ce": l_ce}
        d_box = W_GIOU * d_box_giou + W_L1 * d_box_l1
        lcache = {
            "flat": flat,
            "d_off": d_box[:2] / g * off * (1 - off),
            "d_size": d_box[2:] * size * (1 - size),
            "d_score_raw": (W_FOCAL * d_score_p * score_p * (1 - score_p)).reshape(-1),
            "d_logits": W_CE * d_logits,
        }
        return float(total), comps, lcache

    def backward(self, lcache, cache) -> np.ndarray:
        """Grad of total_loss w.r.t. the search tokens; accumulates head grads."""
        n, grid = cache["n"], cache["grid"]
        g_score = lcache["d_score_raw"][:, None]
        g_off = np.zeros((n, 2))
        g_off[lcache["flat"]] = lcache["d_off"]
        g_size = np.zeros((n, 2))
        g_size[lcache["flat"]] = lcache["d_size"]
        d_os = self._stack_backward(self.score, g_score, cache["c_score"])
        d_os += self._stack_backward(self.offset, g_off, cache["c_off"])
        d_os += self._stack_backward(self.size, g_size, cache["c_size"])
        d_pooled = self._stack_backward(self.cls, lcache["d_logits"][None, :], cache["c_cls"])
        d_os += ops.mean_rows_backward(d_pooled[0], n)
        return d_os
