"""Command-line entry points.

    chunkdiff gen-data --out runs/data
    chunkdiff pretrain-teacher --config cfg.json --out runs/teacher
    chunkdiff distill --config cfg.json --preset history-sweep --out runs/sweep
    chunkdiff rl --config cfg.json --out runs/rl
    chunkdiff eval --config cfg.json --out runs/eval
    chunkdiff report runs/sweep

Configs are JSON; any field not given falls back to its default, and
--seed / --out / --preset override the file. CHUNKDIFF_OUT sets the root
for auto-named output directories.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import torch

from .config import EXPERIMENT_KINDS, ExperimentConfig, load_config, override
from .errors import ChunkdiffError
from .experiment import run_experiment


def _default_out(kind: str, preset: str, seed: int) -> str:
    root = os.environ.get("CHUNKDIFF_OUT", "runs")
    return str(Path(root) / f"{preset or kind}-seed{seed}")


def _load(args: argparse.Namespace, kind: str) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
        if cfg.kind != kind:
            cfg = override(cfg, kind=kind)
    else:
        cfg = ExperimentConfig(kind=kind)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.preset is not None:
        updates["preset"] = args.preset
    if args.dataset is not None:
        updates["dataset_path"] = args.dataset
    if args.heldout is not None:
        updates["heldout_path"] = args.heldout
    if args.teacher is not None:
        updates["teacher_checkpoint"] = args.teacher
    if args.student is not None:
        updates["student_checkpoint"] = args.student
    if args.plots:
        updates["emit_plots"] = True
    if updates:
        cfg = override(cfg, **updates)
    out = args.out or cfg.out_dir or _default_out(cfg.kind, cfg.preset, cfg.seed)
    return override(cfg, out_dir=out)


def _add_stage(sub, kind: str) -> None:
    p = sub.add_parser(kind, help=f"run the {kind} stage")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="run directory")
    p.add_argument("--preset", default=None, help="sweep preset name")
    p.add_argument("--dataset", default=None, help="training dataset file")
    p.add_argument("--heldout", default=None, help="held-out dataset file")
    p.add_argument("--teacher", default=None, help="teacher checkpoint")
    p.add_argument("--student", default=None, help="student/policy checkpoint")
    p.add_argument("--plots", action="store_true", help="write PNG plots if matplotlib is present")
    p.set_defaults(kind=kind)


def _report(run_dir: str) -> int:
    run = Path(run_dir)
    summary = run / "summary.json"
    if not summary.exists():
        print(f"no summary.json under {run}", file=sys.stderr)
        return 1
    payload = json.loads(summary.read_text())
    for key in sorted(payload):
        print(f"{key}: {json.dumps(payload[key], sort_keys=True)}")
    comparison = run / "comparison.txt"
    if comparison.exists():
        print()
        print(comparison.read_text(), end="")
    metrics = run / "metrics.jsonl"
    if metrics.exists():
        lines = metrics.read_text().splitlines()
        print(f"\nmetrics.jsonl: {len(lines)} records")
        for line in lines[-3:]:
            print("  " + line)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chunkdiff",
        description="chunked-diffusion distillation and policy-optimization experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in EXPERIMENT_KINDS:
        _add_stage(sub, kind)
    rep = sub.add_parser("report", help="print the summary of a finished run")
    rep.add_argument("run_dir")
    return parser


def main(argv=None) -> int:
    torch.set_num_threads(1)
    args = build_parser().parse_args(argv)
    if args.command == "report":
        return _report(args.run_dir)
    try:
        cfg = _load(args, args.kind)
        out = run_experiment(cfg)
    except ChunkdiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"run complete: {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
