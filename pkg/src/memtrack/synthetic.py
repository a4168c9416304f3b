"""Deterministic synthetic multi-modal tracking sequences.

Each sequence renders one textured target over a textured background with
scenario-specific dynamics. Two properties are deliberate:

* the target's color drifts over the sequence, so the initial-frame
  template goes stale and recent appearance memory carries real signal;
* motion has short-term persistence, so continuously updated dynamic
  state carries real signal (most visibly under fast motion and
  occlusion).

Distractor objects wear the target's *initial* appearance, which makes
them maximally confusable with a stale template. Auxiliary channels are
derived deterministically from the rendered scene (pseudo-depth, thermal,
event-style frame difference). Generation is a pure function of
(scenario, modality, length, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError
from .embedding import (AUX_MODALITIES, MODALITY_NAMES, RGBE, RGBL,
                        MultiModalFrame, read_frame_file, write_frame_file)
from .rng import make_rng

SCENARIOS = ("plain", "scale_variation", "occlusion", "distractors", "fast_motion")

NATIVE = 96          # rendered raster side
BASE_SIDE = 18.0     # nominal target side in pixels
TEXT_STUB_DIM = 16   # dimension of the fixed per-description text vectors


@dataclass
class SyntheticSequence:
    frames: list[MultiModalFrame]
    gt_boxes: np.ndarray          # [T, 4] (cx, cy, w, h) normalized
    scenario: str
    modality: int
    seed: int
    visible: np.ndarray           # [T] visible fraction of the target
    text: np.ndarray | None
    sequence_id: str

    def __len__(self) -> int:
        return len(self.frames)


def text_stub_vector(description: str, dim: int) -> np.ndarray:
    """Fixed unit vector per description string."""
    v = make_rng(0, f"text:{description}").normal(size=dim)
    return v / np.linalg.norm(v)


def _upsample(coarse: np.ndarray, size: int) -> np.ndarray:
    """Bilinear upsampling of a coarse grid to size x size."""
    g = coarse.shape[0]
    pos = (np.arange(size) + 0.5) * g / size - 0.5
    pos = np.clip(pos, 0, g - 1)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, g - 1)
    f = pos - i0
    tmp = coarse[i0] * (1 - f)[:, None] + coarse[i1] * f[:, None]
    return tmp[:, i0] * (1 - f)[None, :] + tmp[:, i1] * f[None, :]


def _paint_rect(img: np.ndarray, cx: float, cy: float, w: float, h: float,
                color: np.ndarray, checker: float | None = None) -> None:
    x0 = max(int(round(cx - w / 2)), 0)
    x1 = min(int(round(cx + w / 2)), img.shape[1])
    y0 = max(int(round(cy - h / 2)), 0)
    y1 = min(int(round(cy + h / 2)), img.shape[0])
    if x1 <= x0 or y1 <= y0:
        return
    if checker is None:
        img[y0:y1, x0:x1] = color
        return
    q = max(2, int(checker))
    yy, xx = np.mgrid[y0:y1, x0:x1]
    mask = ((xx // q) + (yy // q)) % 2 == 0
    img[y0:y1, x0:x1][mask] = color
    img[y0:y1, x0:x1][~mask] = color * 0.35


def _rect_overlap(ax, ay, aw, ah, bx, by, bw, bh) -> float:
    """Fraction of rect A covered by rect B."""
    ix = max(0.0, min(ax + aw / 2, bx + bw / 2) - max(ax - aw / 2, bx - bw / 2))
    iy = max(0.0, min(ay + ah / 2, by + bh / 2) - max(ay - ah / 2, by - bh / 2))
    return (ix * iy) / (aw * ah)


def _smooth_track(rng, length: int, speed: float, side: float,
                  turn_every: int = 7) -> np.ndarray:
    """Persistent-direction random walk clamped inside the raster."""
    margin = side / 2 + 3
    pos = np.empty((length, 2))
    p = rng.uniform(NATIVE * 0.3, NATIVE * 0.7, size=2)
    theta = rng.uniform(0, 2 * np.pi)
    for t in range(length):
        if t % turn_every == 0 and t > 0:
            theta += rng.uniform(-1.1, 1.1)
        step = np.array([np.cos(theta), np.sin(theta)]) * speed
        p = p + step
        for k in range(2):
            if p[k] < margin:
                p[k] = 2 * margin - p[k]
                theta = np.pi - theta if k == 0 else -theta
            elif p[k] > NATIVE - margin:
                p[k] = 2 * (NATIVE - margin) - p[k]
                theta = np.pi - theta if k == 0 else -theta
        pos[t] = p
    return pos


def generate(scenario: str, modality: int, length: int, seed: int) -> SyntheticSequence:
    """Render one sequence; raises ConfigError on unknown scenario/modality."""
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}")
    if not 0 <= modality < len(MODALITY_NAMES):
        raise ConfigError(f"unknown modality code {modality}")
    if length < 2:
        raise ConfigError("length must be >= 2")

    rng = make_rng(seed, f"gen:{scenario}:{modality}:{length}")
    palette = np.array(
        [[225, 60, 60], [60, 200, 70], [70, 110, 230], [230, 200, 50], [200, 70, 210]],
        dtype=np.float64,
    )
    ci = rng.integers(len(palette))
    c0 = palette[ci]
    c1 = palette[(ci + 2) % len(palette)]

    # background: coarse value noise, mildly tinted per channel
    coarse = rng.uniform(70, 130, size=(6, 6))
    bg_gray = _upsample(coarse, NATIVE)
    tint = rng.uniform(0.85, 1.15, size=3)
    background = np.clip(bg_gray[:, :, None] * tint[None, None, :], 0, 200)

    # motion
    if scenario == "fast_motion":
        speed = 0.45 * BASE_SIDE
        pos = _smooth_track(rng, length, speed, BASE_SIDE * 1.5, turn_every=8)
    else:
        pos = _smooth_track(rng, length, 1.3, BASE_SIDE * 1.5)

    if scenario == "scale_variation":
        phase = rng.uniform(0, 2 * np.pi)
        tt = np.arange(length) / max(length - 1, 1)
        sides = BASE_SIDE * (1.0 + 0.45 * np.sin(2 * np.pi * tt + phase))
    else:
        sides = np.full(length, BASE_SIDE)

    # occlusion events
    occluder = None
    if scenario == "occlusion":
        n_events = max(1, length // 50)
        width = 9
        events = []
        for i in range(n_events):
            mid = int(length * (i + 1) / (n_events + 1))
            events.append((max(1, mid - width // 2), min(length - 1, mid + width // 2)))
        occluder = events

    # distractors carry the *initial* target appearance
    distractors = []
    if scenario == "distractors":
        for sign in (1.0, -1.0):
            offset0 = rng.uniform(1.8, 2.6) * BASE_SIDE * sign
            drift = rng.uniform(0.02, 0.05) * BASE_SIDE * -sign
            distractors.append((offset0, drift, rng.uniform(0, 2 * np.pi)))

    drift_span = max(length - 1, 1)
    frames: list[MultiModalFrame] = []
    gt = np.empty((length, 4))
    visible = np.ones(length)
    text_vec = None
    if modality == RGBL:
        text_vec = text_stub_vector(f"{scenario}-target-{ci}", TEXT_STUB_DIM)
    prev_rgb = None

    for t in range(length):
        rgb = background.copy()
        color_t = c0 + (c1 - c0) * (t / drift_span)
        s = sides[t]
        cx, cy = pos[t]

        dist_rects = []
        for offset0, drift, ang in distractors:
            off = offset0 + drift * t
            dx = cx + off * np.cos(ang)
            dy = cy + off * np.sin(ang)
            dx = np.clip(dx, BASE_SIDE / 2 + 2, NATIVE - BASE_SIDE / 2 - 2)
            dy = np.clip(dy, BASE_SIDE / 2 + 2, NATIVE - BASE_SIDE / 2 - 2)
            _paint_rect(rgb, dx, dy, BASE_SIDE, BASE_SIDE, c0, checker=BASE_SIDE / 3)
            dist_rects.append((dx, dy))

        _paint_rect(rgb, cx, cy, s, s, color_t, checker=s / 3)

        occ_rect = None
        if occluder is not None:
            for (t0, t1) in occluder:
                if t0 <= t <= t1:
                    u = (t - t0) / max(t1 - t0, 1)
                    ox = cx + (1 - 2 * u) * 1.6 * s
                    occ_rect = (ox, cy, 2.4 * s, 2.4 * s)
                    _paint_rect(rgb, *occ_rect, np.array([45.0, 45.0, 45.0]))
                    visible[t] = 1.0 - _rect_overlap(cx, cy, s, s, *occ_rect)
                    break

        rgb = np.clip(rgb, 0, 255)

        aux = None
        if modality in AUX_MODALITIES:
            aux_map = np.zeros((NATIVE, NATIVE))
            if modality == RGBE:
                if prev_rgb is not None:
                    aux_map = np.clip(np.abs(rgb - prev_rgb).mean(axis=2) * 2.0, 0, 255)
            else:
                if MODALITY_NAMES[modality] == "rgbd":
                    aux_map = np.tile(np.linspace(40, 120, NATIVE)[:, None], (1, NATIVE))
                    for dx, dy in dist_rects:
                        _paint_rect(aux_map[:, :, None], dx, dy, BASE_SIDE, BASE_SIDE,
                                    np.array([200.0]))
                    _paint_rect(aux_map[:, :, None], cx, cy, s, s, np.array([225.0]))
                    if occ_rect is not None:
                        _paint_rect(aux_map[:, :, None], *occ_rect, np.array([250.0]))
                else:  # thermal
                    aux_map = bg_gray * 0.3
                    for dx, dy in dist_rects:
                        _paint_rect(aux_map[:, :, None], dx, dy, BASE_SIDE, BASE_SIDE,
                                    np.array([140.0]))
                    _paint_rect(aux_map[:, :, None], cx, cy, s, s, np.array([235.0]))
                    if occ_rect is not None:
                        _paint_rect(aux_map[:, :, None], *occ_rect, np.array([60.0]))
            aux = np.clip(np.repeat(aux_map[:, :, None], 3, axis=2), 0, 255)
        prev_rgb = rgb

        frame = MultiModalFrame(rgb=rgb, aux=aux, modality=modality, text=text_vec,
                                visibility=float(visible[t]))
        frame.validate()
        frames.append(frame)
        gt[t] = [cx / NATIVE, cy / NATIVE, s / NATIVE, s / NATIVE]

    seq_id = f"{scenario}-{MODALITY_NAMES[modality]}-l{length}-s{seed}"
    return SyntheticSequence(frames, gt, scenario, modality, seed, visible, text_vec, seq_id)


def save_sequence_dir(seq: SyntheticSequence, outdir: str | Path) -> None:
    """One frame file per frame plus a JSON manifest with boxes and metadata."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(seq.frames):
        write_frame_file(outdir / f"frame_{t:05d}.bin", frame, t)
    manifest = {
        "sequence_id": seq.sequence_id,
        "scenario": seq.scenario,
        "modality": seq.modality,
        "seed": seq.seed,
        "length": len(seq),
        "gt_boxes": seq.gt_boxes.tolist(),
        "visible": seq.visible.tolist(),
        "text": None if seq.text is None else seq.text.tolist(),
    }
    (outdir / "sequence.json").write_text(json.dumps(manifest, indent=1))


def load_sequence_dir(path: str | Path) -> SyntheticSequence:
    path = Path(path)
    manifest = json.loads((path / "sequence.json").read_text())
    text = None if manifest["text"] is None else np.array(manifest["text"])
    frames = []
    for t in range(manifest["length"]):
        frame, index = read_frame_file(path / f"frame_{t:05d}.bin")
        if index != t:
            raise ConfigError(f"frame file {t} carries index {index}")
        frame.text = text
        frames.append(frame)
    return SyntheticSequence(
        frames=frames,
        gt_boxes=np.array(manifest["gt_boxes"]),
        scenario=manifest["scenario"],
        modality=manifest["modality"],
        seed=manifest["seed"],
        visible=np.array(manifest["visible"]),
        text=text,
        sequence_id=manifest["sequence_id"],
    )


def standard_suite(scenarios=SCENARIOS, seeds=range(10), length: int = 100,
                   modality_cycle=(0, 1, 2, 3, 4)) -> list[SyntheticSequence]:
    """The evaluation suite: scenarios x seeds, modalities cycled per seed."""
    out = []
    for scenario in scenarios:
        for i, seed in enumerate(seeds):
            modality = modality_cycle[i % len(modality_cycle)]
            out.append(generate(scenario, modality, length, 10_000 + seed))
    return out


def training_set(n_sequences: int, length: int, seed: int) -> list[SyntheticSequence]:
    """Training pool spanning all scenarios and modalities, disjoint seeds."""
    rng = make_rng(seed, "training-set")
    out = []
    for i in range(n_sequences):
        scenario = SCENARIOS[i % len(SCENARIOS)]
        modality = int(rng.integers(0, len(MODALITY_NAMES)))
        out.append(generate(scenario, modality, length, 500 + int(rng.integers(0, 10_000))))
    return out
