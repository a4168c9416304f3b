"""Ablation grid runner.

Trains one model per grid cell and training seed, evaluates every cell
on a shared held-out synthetic suite, and emits one averaged CSV row per
cell. Grid axes mirror the studied knobs: module toggles, prompt token
count, bank capacity, retention policy, position-bias variant and the
state-update source.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

from .config import Config, ConfigError
from .metrics import SuiteMetrics, evaluate
from .synthetic import SyntheticSequence
from .tracking import Tracker
from .training import train

GRID_AXES = ("mcp", "dsf", "n_m", "bank_l", "policy", "bias", "dsf_source")
_ONOFF = {"on": True, "off": False}


def parse_grid_text(text: str) -> dict[str, list[str]]:
    grid: dict[str, list[str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"grid line {lineno}: expected axis=v1,v2,...")
        axis, raw = (s.strip() for s in line.split("=", 1))
        if axis not in GRID_AXES:
            raise ConfigError(f"grid line {lineno}: unknown axis {axis!r}")
        grid[axis] = [v.strip() for v in raw.split(",") if v.strip()]
    if not grid:
        raise ConfigError("empty ablation grid")
    return grid


def grid_cells(grid: dict[str, list[str]]) -> list[dict[str, str]]:
    axes = [(a, grid[a]) for a in GRID_AXES if a in grid]
    cells = [{}]
    for axis, values in axes:
        cells = [dict(c, **{axis: v}) for c in cells for v in values]
    return cells


def cell_config(base: Config, cell: dict[str, str], seed: int) -> Config:
    kw: dict = {"seed": seed}
    if "mcp" in cell:
        kw["mcp_enabled"] = _ONOFF[cell["mcp"]]
    if "dsf" in cell:
        kw["dsf_enabled"] = _ONOFF[cell["dsf"]]
    if "n_m" in cell:
        kw["mcp_n_tokens"] = int(cell["n_m"])
    if "bank_l" in cell:
        kw["mcp_bank_l"] = int(cell["bank_l"])
    if "policy" in cell:
        kw["mcp_policy"] = cell["policy"]
    if "bias" in cell:
        kw["mcp_bias"] = cell["bias"]
    if "dsf_source" in cell:
        kw["dsf_source"] = cell["dsf_source"]
    return replace(base, **kw)


@dataclass
class CellResult:
    cell_id: str
    cell: dict[str, str]
    per_seed: list[SuiteMetrics] = field(default_factory=list)

    def mean(self, attr: str) -> float:
        return sum(getattr(m, attr) for m in self.per_seed) / len(self.per_seed)


def run_cell(base: Config, cell: dict[str, str], train_seeds: list[int],
             eval_seqs: list[SyntheticSequence], progress: bool = False) -> list[SuiteMetrics]:
    out = []
    for seed in train_seeds:
        cfg = cell_config(base, cell, seed)
        result = train(cfg, progress=progress)
        tracker = Tracker(result.model)
        runs = [tracker.track(seq) for seq in eval_seqs]
        out.append(evaluate(runs))
    return out


def run_ablation(base: Config, grid: dict[str, list[str]], train_seeds: list[int],
                 eval_seqs: list[SyntheticSequence], progress: bool = False) -> list[CellResult]:
    results = []
    for i, cell in enumerate(grid_cells(grid)):
        if progress:
            print(f"[ablate] cell {i}: {cell}")
        res = CellResult(cell_id=f"c{i:03d}", cell=cell)
        res.per_seed = run_cell(base, cell, train_seeds, eval_seqs, progress=False)
        results.append(res)
    return results


def ablation_csv(results: list[CellResult], base: Config) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["cell_id", "mcp", "dsf", "n_m", "bank_l", "policy", "bias",
                     "dsf_source", "mean_iou", "auc", "precision"])
    for r in results:
        c = r.cell
        writer.writerow([
            r.cell_id,
            c.get("mcp", "on" if base.mcp_enabled else "off"),
            c.get("dsf", "on" if base.dsf_enabled else "off"),
            c.get("n_m", base.mcp_n_tokens),
            c.get("bank_l", base.mcp_bank_l),
            c.get("policy", base.mcp_policy),
            c.get("bias", base.mcp_bias),
            c.get("dsf_source", base.dsf_source),
            f"{r.mean('mean_iou'):.6f}",
            f"{r.mean('auc'):.6f}",
            f"{r.mean('precision'):.6f}",
        ])
    return buf.getvalue()
