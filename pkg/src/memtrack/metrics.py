"""Tracking metrics and CSV emission.

Success AUC follows the one-pass-evaluation convention: success(tau) is
the fraction of frames with IoU >= tau, averaged over the 21 thresholds
0.00, 0.05, ..., 1.00 (so tau = 0 always succeeds). Center precision is
the fraction of frames whose center error is below a pixel threshold
scaled to the raster (the usual 20 px at a 256 px reference).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .tracking import TrackerRun

IOU_THRESHOLDS = np.round(np.arange(0, 21) * 0.05, 2)
PRECISION_REF_PX = 20.0
PRECISION_REF_SIDE = 256.0


def success_auc(ious: np.ndarray) -> float:
    return float(np.mean([(ious >= t).mean() for t in IOU_THRESHOLDS]))


def center_precision(pred: np.ndarray, gt: np.ndarray, native: float = 96.0) -> float:
    err = np.linalg.norm((pred[:, :2] - gt[:, :2]) * native, axis=1)
    return float((err <= PRECISION_REF_PX * native / PRECISION_REF_SIDE).mean())


@dataclass
class RunMetrics:
    sequence_id: str
    scenario: str
    mean_iou: float
    auc: float
    precision: float


@dataclass
class SuiteMetrics:
    mean_iou: float
    auc: float
    precision: float
    per_run: list[RunMetrics] = field(default_factory=list)
    per_scenario: dict[str, dict] = field(default_factory=dict)


def score_run(run: TrackerRun) -> RunMetrics:
    # frame 0 is the given init box; score the tracked frames
    ious = run.ious[1:]
    return RunMetrics(
        sequence_id=run.sequence_id,
        scenario=run.scenario,
        mean_iou=float(ious.mean()),
        auc=success_auc(ious),
        precision=center_precision(run.pred_boxes[1:], run.gt_boxes[1:]),
    )


def evaluate(runs: list[TrackerRun]) -> SuiteMetrics:
    if not runs:
        raise ValueError("evaluate requires at least one run")
    per_run = [score_run(r) for r in runs]
    by_scenario: dict[str, list[RunMetrics]] = {}
    for m in per_run:
        by_scenario.setdefault(m.scenario, []).append(m)
    per_scenario = {
        s: {
            "mean_iou": float(np.mean([m.mean_iou for m in ms])),
            "auc": float(np.mean([m.auc for m in ms])),
            "precision": float(np.mean([m.precision for m in ms])),
            "count": len(ms),
        }
        for s, ms in sorted(by_scenario.items())
    }
    return SuiteMetrics(
        mean_iou=float(np.mean([m.mean_iou for m in per_run])),
        auc=float(np.mean([m.auc for m in per_run])),
        precision=float(np.mean([m.precision for m in per_run])),
        per_run=per_run,
        per_scenario=per_scenario,
    )


def eval_csv(metrics: SuiteMetrics) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sequence_id", "scenario", "mean_iou", "auc"])
    for m in metrics.per_run:
        writer.writerow([m.sequence_id, m.scenario, f"{m.mean_iou:.6f}", f"{m.auc:.6f}"])
    return buf.getvalue()
