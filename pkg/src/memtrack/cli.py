"""Command-line interface.

Subcommands: gen-data, train, track, eval, ablate, verify-theory.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import theory
from .ablation import ablation_csv, parse_grid_text, run_ablation
from .checkpoint import load_model, save_checkpoint
from .config import Config, load_config
from .embedding import MODALITY_NAMES
from .metrics import eval_csv, evaluate
from .svg_report import write_line_chart
from .synthetic import (SCENARIOS, generate, load_sequence_dir,
                        save_sequence_dir, standard_suite)
from .tracking import Tracker, TrackerRun
from .training import loss_csv, train


def _cmd_gen_data(args) -> int:
    modality = MODALITY_NAMES.index(args.modality)
    seq = generate(args.scenario, modality, args.length, args.seed)
    save_sequence_dir(seq, args.out)
    print(f"wrote {len(seq)} frames to {args.out} ({seq.sequence_id})")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    result = train(cfg, progress=not args.quiet,
                   diagnostics_path=Path(args.out_checkpoint).with_suffix(".abort.json"))
    save_checkpoint(args.out_checkpoint, result.model)
    csv_path = args.loss_csv or str(Path(args.out_checkpoint).with_suffix(".loss.csv"))
    Path(csv_path).write_text(loss_csv(result.rows))
    if args.svg:
        steps = [r["step"] for r in result.rows]
        write_line_chart(
            args.svg,
            {key: (steps, [r[key] for r in result.rows])
             for key in ("total", "giou", "l1", "focal", "ce")},
            title="training loss", x_label="step", y_label="loss",
        )
    counts = result.model.param_counts()
    print(f"checkpoint: {args.out_checkpoint}")
    print(f"loss csv:   {csv_path}")
    print(f"trainable fraction: {counts['trainable']}/{counts['total']} "
          f"({100 * counts['trainable_fraction']:.1f}%)")
    print(f"frozen partition unchanged: "
          f"{result.frozen_hash_before == result.frozen_hash_after}")
    return 0


def _cmd_track(args) -> int:
    model = load_model(args.checkpoint)
    seq = load_sequence_dir(args.sequence)
    run = Tracker(model).track(seq)
    run.save(args.out_run)
    print(f"{run.sequence_id}: mean IoU {run.ious[1:].mean():.4f} -> {args.out_run}")
    return 0


def _cmd_eval(args) -> int:
    paths: list[Path] = []
    for spec in args.runs:
        p = Path(spec)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.json")))
        else:
            paths.append(p)
    runs = [TrackerRun.load(p) for p in paths]
    metrics = evaluate(runs)
    Path(args.out_csv).write_text(eval_csv(metrics))
    print(f"{len(runs)} runs: mean IoU {metrics.mean_iou:.4f} "
          f"AUC {metrics.auc:.4f} precision {metrics.precision:.4f}")
    for scenario, m in metrics.per_scenario.items():
        print(f"  {scenario:16s} iou {m['mean_iou']:.4f} auc {m['auc']:.4f} "
              f"({m['count']} runs)")
    if args.svg:
        import numpy as np

        from .metrics import IOU_THRESHOLDS
        ious = np.concatenate([r.ious[1:] for r in runs])
        curve = [(ious >= t).mean() for t in IOU_THRESHOLDS]
        write_line_chart(args.svg, {"success": (list(IOU_THRESHOLDS), curve)},
                         title="success curve", x_label="IoU threshold",
                         y_label="success rate")
    return 0


def _cmd_ablate(args) -> int:
    base = load_config(args.config) if args.config else Config()
    grid = parse_grid_text(Path(args.grid).read_text())
    train_seeds = [int(s) for s in args.train_seeds.split(",")]
    eval_seqs = standard_suite(seeds=range(args.eval_seeds), length=args.eval_length)
    results = run_ablation(base, grid, train_seeds, eval_seqs, progress=not args.quiet)
    Path(args.out_csv).write_text(ablation_csv(results, base))
    print(f"wrote {len(results)} cells to {args.out_csv}")
    return 0


def _cmd_verify_theory(args) -> int:
    betas = None
    if args.beta_grid:
        betas = [float(b) for b in args.beta_grid.split(",")]
    report = theory.theory_report(betas=betas, heads=args.heads,
                                  k_train=args.k_train, l_test=args.l_test)
    lines = ["position-bias tail mass (exact vs geometric bound)"]
    for r in report["tail"]:
        lines.append(f"  beta={r['beta']:+.6f} K={r['k']} L={r['l']} "
                     f"tail={r['exact_tail']:.3e} bound={r['bound']:.3e} "
                     f"{'ok' if r['ok'] else 'FAIL'}")
    lines.append("memory horizon (formula vs scan)")
    for r in report["horizon"]:
        lines.append(f"  beta={r['beta']:+.6f} eta={r['eta']:g} "
                     f"formula={r['formula']} scanned={r['scanned']} "
                     f"{'ok' if r['ok'] else 'FAIL'}")
    lines.append("equal-content attention ratio law")
    for r in report["ratio"]:
        lines.append(f"  beta={r['beta']:+.6f} gap={r['gap']:2d} "
                     f"measured={r['measured']:.12e} expected={r['expected']:.12e} "
                     f"{'ok' if r['ok'] else 'FAIL'}")
    lines.append("state-impulse decay vs exp(-c k) envelope")
    for r in report["decay"]:
        lines.append(f"  draw={r['draw']:2d} k={r['k']:2d} measured={r['measured']:.3e} "
                     f"bound={r['bound']:.3e} ratio={r['ratio']:.3f} "
                     f"{'ok' if r['ok'] else 'FAIL'}")
    lines.append(f"ALL {'OK' if report['all_ok'] else 'FAILED'}")
    text = "\n".join(lines) + "\n"

    out = Path(args.out_report)
    out.with_suffix(".txt").write_text(text)
    with open(out.with_suffix(".csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["section", "beta", "k", "l", "eta", "gap", "draw",
                         "measured", "reference", "ok"])
        for r in report["tail"]:
            writer.writerow(["tail", r["beta"], r["k"], r["l"], "", "", "",
                             r["exact_tail"], r["bound"], r["ok"]])
        for r in report["horizon"]:
            writer.writerow(["horizon", r["beta"], "", "", r["eta"], "", "",
                             r["scanned"], r["formula"], r["ok"]])
        for r in report["ratio"]:
            writer.writerow(["ratio", r["beta"], "", "", "", r["gap"], "",
                             r["measured"], r["expected"], r["ok"]])
        for r in report["decay"]:
            writer.writerow(["decay", "", r["k"], "", "", "", r["draw"],
                             r["measured"], r["bound"], r["ok"]])
    print(text, end="")
    print(f"report: {out.with_suffix('.txt')} / {out.with_suffix('.csv')}")
    return 0 if report["all_ok"] else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="memtrack")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic sequence to a directory")
    g.add_argument("--scenario", choices=SCENARIOS, required=True)
    g.add_argument("--modality", choices=MODALITY_NAMES, required=True)
    g.add_argument("--length", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen_data)

    t = sub.add_parser("train", help="train the trainable partition")
    t.add_argument("--config", required=True)
    t.add_argument("--out-checkpoint", required=True)
    t.add_argument("--loss-csv")
    t.add_argument("--svg")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=_cmd_train)

    k = sub.add_parser("track", help="run the tracker over a sequence directory")
    k.add_argument("--checkpoint", required=True)
    k.add_argument("--sequence", required=True)
    k.add_argument("--out-run", required=True)
    k.set_defaults(func=_cmd_track)

    e = sub.add_parser("eval", help="score one or more run files")
    e.add_argument("--runs", nargs="+", required=True)
    e.add_argument("--out-csv", required=True)
    e.add_argument("--svg")
    e.set_defaults(func=_cmd_eval)

    a = sub.add_parser("ablate", help="train/evaluate a grid of module variants")
    a.add_argument("--grid", required=True)
    a.add_argument("--config")
    a.add_argument("--out-csv", required=True)
    a.add_argument("--train-seeds", default="0,1,2")
    a.add_argument("--eval-seeds", type=int, default=5)
    a.add_argument("--eval-length", type=int, default=60)
    a.add_argument("--quiet", action="store_true")
    a.set_defaults(func=_cmd_ablate)

    v = sub.add_parser("verify-theory", help="check the closed-form bounds numerically")
    v.add_argument("--beta-grid", help="comma-separated slopes; default: deployed head slopes")
    v.add_argument("--heads", type=int, default=4)
    v.add_argument("--k-train", type=int, default=50)
    v.add_argument("--l-test", type=int, default=200)
    v.add_argument("--out-report", required=True)
    v.set_defaults(func=_cmd_verify_theory)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
