"""Experiment orchestration: stages, sweep presets, and run-directory output.

Every run owns one directory containing the fully resolved config, a
deterministic metric log (one JSON record per line), a separate wall-time
log (timings are the one thing a rerun may not reproduce), checkpoints, and
a human-readable summary. Sweep presets fan a base config out into legs
under legs/<name>/ and emit a comparison table across them.

    history-sweep    the five history paradigms, shared seed and budget
    weighting-sweep  the six chunk-weighting presets
    policy-sweep     consistency policy vs stochastic-drift grid
                     (sigma x KL-weight), each from the same checkpoint
"""

from __future__ import annotations

import dataclasses
import json
import time
from pathlib import Path
from typing import Dict, List, Optional

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, override, write_resolved
from .distill import DistillConfig, train_distill
from .errors import ConfigError, DependencyError
from .evaluate import eval_long_horizon, eval_reward_suite, paired_composite
from .network import DenoiserModel, ModelConfig, clone_model
from .numerics import RngStream
from .packing import parse_weighting
from .pretrain import PretrainConfig, data_variance, pretrain_teacher
from .rewards import RewardSpec
from .rl import RlConfig, train_rl
from .schedule import default_grid
from .world import BlobDataset, BlobWorld, gen_dataset

HISTORY_SWEEP_LEGS = (
    "teacher_forcing",
    "diffusion_forcing",
    "self_forcing",
    "diffusion_forcing_self_rollout",
    "interleaved",
)
WEIGHTING_SWEEP_LEGS = (
    "mode(-0.54)",
    "mode(0.81)",
    "logit-normal(0,1)",
    "shift(1)",
    "shift(0)",
    "shift(-1)",
)
POLICY_SWEEP_LEGS = (
    ("consistency", 0.0, 0.0),
    ("em", 0.1, 0.0),
    ("em", 0.1, 0.004),
    ("em", 0.4, 0.0),
    ("em", 0.4, 0.004),
    ("em", 0.8, 0.0),
    ("em", 0.8, 0.004),
)


def build_world(cfg: ExperimentConfig) -> BlobWorld:
    return BlobWorld(
        grid_size=cfg.world.grid_size,
        frames_per_chunk=cfg.world.frames_per_chunk,
        n_chunks=cfg.world.n_chunks,
    )


def build_model_config(cfg: ExperimentConfig, role: str) -> ModelConfig:
    world = build_world(cfg)
    return ModelConfig(
        dim=world.dim,
        cond_dim=world.cond_dim,
        tokens_per_chunk=world.frames_per_chunk,
        width=cfg.net.width,
        n_blocks=cfg.net.n_blocks,
        n_heads=cfg.net.n_heads,
        level_features=cfg.net.level_features,
        role=role,
    )


def _write_jsonl(path: Path, records: List[Dict[str, object]]) -> None:
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _need(path: str, what: str) -> Path:
    if not path:
        raise DependencyError(f"config does not name a {what}")
    p = Path(path)
    if not p.exists():
        raise DependencyError(f"{what} not found at {p}")
    return p


def _load_dataset(cfg: ExperimentConfig) -> BlobDataset:
    return BlobDataset(_need(cfg.dataset_path, "dataset file"))


def _summary(out: Path, payload: Dict[str, object]) -> None:
    (out / "summary.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    lines = [f"{k}: {json.dumps(v, sort_keys=True)}" for k, v in sorted(payload.items())]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")


def _reward_spec(cfg: ExperimentConfig) -> RewardSpec:
    return RewardSpec(
        weights=dataclasses.asdict(cfg.rewards), grid_size=cfg.world.grid_size
    )


def moving_average(values: List[float], window: int) -> List[float]:
    out = []
    for i in range(len(values)):
        lo = max(0, i + 1 - window)
        out.append(sum(values[lo : i + 1]) / (i + 1 - lo))
    return out


# ---------------------------------------------------------------------------
# stages


def _run_gen_data(cfg: ExperimentConfig, out: Path) -> Dict[str, object]:
    world = build_world(cfg)
    train_path = out / "train.ds"
    heldout_path = out / "heldout.ds"
    gen_dataset(world, cfg.data.train_count, cfg.data.seed, str(train_path))
    gen_dataset(world, cfg.data.heldout_count, cfg.data.seed + 1, str(heldout_path))
    records = [
        {"file": "train.ds", "count": cfg.data.train_count, "seed": cfg.data.seed},
        {"file": "heldout.ds", "count": cfg.data.heldout_count, "seed": cfg.data.seed + 1},
    ]
    _write_jsonl(out / "metrics.jsonl", records)
    return {
        "kind": "gen-data",
        "train": str(train_path),
        "heldout": str(heldout_path),
        "train_count": cfg.data.train_count,
        "heldout_count": cfg.data.heldout_count,
    }


def _run_pretrain(cfg: ExperimentConfig, out: Path) -> Dict[str, object]:
    dataset = _load_dataset(cfg)
    heldout = BlobDataset(_need(cfg.heldout_path, "held-out dataset file"))
    model = DenoiserModel(build_model_config(cfg, "teacher"), RngStream(cfg.seed, 0x1EAC))
    pcfg = PretrainConfig(
        iterations=cfg.pretrain.iterations,
        batch_size=cfg.pretrain.batch_size,
        lr=cfg.pretrain.lr,
        optimizer=cfg.pretrain.optimizer,
        eval_every=cfg.pretrain.eval_every,
        eval_samples=cfg.pretrain.eval_samples,
        seed=cfg.seed,
        plateau_patience=cfg.pretrain.plateau_patience,
        plateau_rel_improvement=cfg.pretrain.plateau_rel_improvement,
    )
    records = pretrain_teacher(pcfg, model, dataset, heldout)
    _write_jsonl(out / "metrics.jsonl", records)
    save_checkpoint(out / "teacher.ckpt", model, {"stage": "pretrain", "seed": cfg.seed})
    final_eval = [r["heldout_mse"] for r in records if "heldout_mse" in r][-1]
    var = data_variance(heldout.data)
    return {
        "kind": "pretrain-teacher",
        "iterations": records[-1]["iteration"],
        "final_heldout_mse": final_eval,
        "data_variance": var,
        "mse_over_variance": final_eval / var,
        "teacher_checkpoint": str(out / "teacher.ckpt"),
    }


def _distill_config(cfg: ExperimentConfig) -> DistillConfig:
    return DistillConfig(
        paradigm=cfg.distill.paradigm,
        n_chunks=cfg.world.n_chunks,
        batch_size=cfg.distill.batch_size,
        iterations=cfg.distill.iterations,
        ttur_ratio=cfg.distill.ttur_ratio,
        lr_student=cfg.distill.lr_student,
        lr_critic=cfg.distill.lr_critic,
        grid=default_grid(cfg.distill.grid_levels),
        weighting=parse_weighting(cfg.distill.weighting),
        optimizer=cfg.distill.optimizer,
        seed=cfg.seed,
        skip_final_endpoint_call=cfg.distill.skip_final_endpoint_call,
    )


def _run_distill(cfg: ExperimentConfig, out: Path) -> Dict[str, object]:
    dataset = _load_dataset(cfg)
    teacher = load_checkpoint(_need(cfg.teacher_checkpoint, "teacher checkpoint"))
    student = clone_model(teacher, role="student")
    critic = clone_model(teacher, role="critic")
    dcfg = _distill_config(cfg)
    records = train_distill(dcfg, student, critic, teacher, dataset)
    _write_jsonl(out / "metrics.jsonl", records)
    save_checkpoint(
        out / "student.ckpt", student,
        {"stage": "distill", "paradigm": dcfg.paradigm, "seed": cfg.seed},
    )
    save_checkpoint(out / "critic.ckpt", critic, {"stage": "distill", "seed": cfg.seed})
    gen = [(r["iteration"], r["generator_loss"]) for r in records if r["generator_loss"] is not None]
    summary: Dict[str, object] = {
        "kind": "distill",
        "paradigm": dcfg.paradigm,
        "weighting": cfg.distill.weighting,
        "iterations": dcfg.iterations,
        "student_checkpoint": str(out / "student.ckpt"),
    }
    if gen:
        vals = [v for _, v in gen]
        ma = moving_average(vals, 50)
        at100 = [m for (it, _), m in zip(gen, ma) if it <= 100]
        summary["generator_loss_ma_at_100"] = at100[-1] if at100 else ma[0]
        summary["generator_loss_ma_final"] = ma[-1]
        summary["critic_loss_final"] = records[-1]["critic_loss"]
    world = build_world(cfg)
    conds = world.sample_conditions(RngStream(cfg.seed, 0xE0A1), cfg.eval.n_conditions)
    drift = eval_long_horizon(
        student, world, conds, cfg.eval.t_eval, dcfg.grid, cfg.seed, oracle=cfg.eval.oracle
    )
    summary["per_chunk_mse"] = drift["per_chunk_mse"]
    summary["drift_final_chunk"] = drift["per_chunk_mse"][-1]
    return summary


def _rl_config(cfg: ExperimentConfig) -> RlConfig:
    return RlConfig(
        group_size=cfg.rl.group_size,
        conditions_per_step=cfg.rl.conditions_per_step,
        n_chunks=cfg.world.n_chunks,
        iterations=cfg.rl.iterations,
        lr=cfg.rl.lr,
        grid=default_grid(cfg.rl.grid_levels),
        weighting=parse_weighting(cfg.rl.weighting),
        policy=cfg.rl.policy,
        em_sigma=cfg.rl.em_sigma,
        em_beta=cfg.rl.em_beta,
        a_max=cfg.rl.a_max,
        eps=cfg.rl.eps,
        use_interleaved_history=cfg.rl.use_interleaved_history,
        optimizer=cfg.rl.optimizer,
        seed=cfg.seed,
    )


def _run_rl(cfg: ExperimentConfig, out: Path) -> Dict[str, object]:
    policy = load_checkpoint(_need(cfg.student_checkpoint, "policy init checkpoint"))
    ref = clone_model(policy)
    for p in ref.parameters():
        p.requires_grad_(False)
    world = build_world(cfg)
    spec = _reward_spec(cfg)
    rcfg = _rl_config(cfg)

    def condition_source(stream: RngStream, n: int):
        conds = world.sample_conditions(stream, n)
        return conds, world.trajectories(conds)

    eval_conds = world.sample_conditions(RngStream(cfg.seed, 0xE0A2), cfg.eval.n_conditions)
    before = eval_reward_suite(
        policy, world, spec, eval_conds, rcfg.grid, cfg.seed, group=cfg.eval.group
    )
    records = train_rl(rcfg, policy, condition_source, spec, ref_model=ref)
    _write_jsonl(out / "metrics.jsonl", records)
    save_checkpoint(
        out / "policy.ckpt", policy,
        {"stage": "rl", "policy": rcfg.policy, "seed": cfg.seed},
    )
    after = eval_reward_suite(
        policy, world, spec, eval_conds, rcfg.grid, cfg.seed, group=cfg.eval.group
    )
    paired = paired_composite(before, after, spec)
    return {
        "kind": "rl",
        "policy": rcfg.policy,
        "em_sigma": rcfg.em_sigma,
        "em_beta": rcfg.em_beta,
        "iterations": rcfg.iterations,
        "final_loss": records[-1]["loss"] if records else None,
        "final_raw_composite": records[-1]["reward_raw_composite"] if records else None,
        "eval_mean_before": paired["mean_before"],
        "eval_mean_after": paired["mean_after"],
        "eval_wins": paired["wins"],
        "eval_n": paired["n_effective"],
        "eval_p_value": paired["p_value"],
        "policy_checkpoint": str(out / "policy.ckpt"),
    }


def _run_eval(cfg: ExperimentConfig, out: Path) -> Dict[str, object]:
    model = load_checkpoint(_need(cfg.student_checkpoint, "checkpoint to evaluate"))
    world = build_world(cfg)
    conds = world.sample_conditions(RngStream(cfg.seed, 0xE0A1), cfg.eval.n_conditions)
    grid = default_grid(cfg.distill.grid_levels)
    result = eval_long_horizon(
        model, world, conds, cfg.eval.t_eval, grid, cfg.seed, oracle=cfg.eval.oracle
    )
    records = [
        {
            "chunk": t,
            "mse": result["per_chunk_mse"][t],
            **{k: v[t] for k, v in result["per_chunk_rewards"].items()},
        }
        for t in range(result["t_eval"])
    ]
    _write_jsonl(out / "metrics.jsonl", records)
    return {
        "kind": "eval",
        "oracle": result["oracle"],
        "t_eval": result["t_eval"],
        "per_chunk_mse": result["per_chunk_mse"],
        "drift_final_chunk": result["per_chunk_mse"][-1],
    }


_STAGES = {
    "gen-data": _run_gen_data,
    "pretrain-teacher": _run_pretrain,
    "distill": _run_distill,
    "rl": _run_rl,
    "eval": _run_eval,
}


# ---------------------------------------------------------------------------
# sweeps


def _sweep_legs(cfg: ExperimentConfig) -> List[tuple]:
    base = override(cfg, preset="")
    if cfg.preset == "history-sweep":
        return [
            (p, override(base, distill=dataclasses.replace(cfg.distill, paradigm=p)))
            for p in HISTORY_SWEEP_LEGS
        ]
    if cfg.preset == "weighting-sweep":
        return [
            (
                w.replace("logit-normal", "logit_normal")
                .replace("(", "_")
                .replace(")", "")
                .replace(",", "_")
                .replace("-", "m"),
                override(base, distill=dataclasses.replace(cfg.distill, weighting=w)),
            )
            for w in WEIGHTING_SWEEP_LEGS
        ]
    if cfg.preset == "policy-sweep":
        return [
            (
                "consistency" if pol == "consistency" else f"em_sigma{sig}_beta{beta}",
                override(
                    base,
                    rl=dataclasses.replace(cfg.rl, policy=pol, em_sigma=sig, em_beta=beta),
                ),
            )
            for pol, sig, beta in POLICY_SWEEP_LEGS
        ]
    raise ConfigError(f"unknown preset {cfg.preset!r}")


def _comparison_rows(preset: str, names: List[str], summaries: List[Dict[str, object]]):
    if preset in ("history-sweep", "weighting-sweep"):
        cols = ["leg", "generator_loss_ma_final", "drift_final_chunk", "per_chunk_mse"]
        rows = [
            [n, s.get("generator_loss_ma_final"), s.get("drift_final_chunk"), s.get("per_chunk_mse")]
            for n, s in zip(names, summaries)
        ]
    else:
        cols = ["leg", "final_raw_composite", "eval_mean_after", "eval_wins", "eval_p_value"]
        rows = [
            [n, s.get("final_raw_composite"), s.get("eval_mean_after"), s.get("eval_wins"), s.get("eval_p_value")]
            for n, s in zip(names, summaries)
        ]
    return cols, rows


def _write_comparison(out: Path, cols, rows) -> None:
    with (out / "comparison.csv").open("w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(json.dumps(v) if isinstance(v, list) else str(v) for v in row) + "\n")
    width = max(len(c) for c in cols)
    lines = []
    for row in rows:
        lines.append("  ".join(f"{c}={v}" for c, v in zip(cols, row)))
    (out / "comparison.txt").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# entry point


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[str] = None) -> Path:
    """Execute one stage or sweep; returns the run directory."""
    out = Path(out_dir or cfg.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    cfg = override(cfg, out_dir=str(out))
    write_resolved(cfg, out / "config.json")
    timings: List[Dict[str, object]] = []
    t0 = time.perf_counter()
    if cfg.preset:
        names, summaries = [], []
        for name, leg in _sweep_legs(cfg):
            leg_dir = out / "legs" / name
            run_experiment(leg, str(leg_dir))
            names.append(name)
            summaries.append(json.loads((leg_dir / "summary.json").read_text()))
        cols, rows = _comparison_rows(cfg.preset, names, summaries)
        _write_comparison(out, cols, rows)
        _summary(out, {"kind": cfg.kind, "preset": cfg.preset, "legs": names})
    else:
        summary = _STAGES[cfg.kind](cfg, out)
        _summary(out, summary)
        if cfg.emit_plots:
            _emit_plots(cfg, out)
    timings.append({"stage": cfg.preset or cfg.kind, "seconds": time.perf_counter() - t0})
    with (out / "timing.jsonl").open("w") as fh:
        for rec in timings:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return out


def _emit_plots(cfg: ExperimentConfig, out: Path) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        (out / "plots.skipped").write_text("matplotlib not installed\n")
        return
    metrics_path = out / "metrics.jsonl"
    if not metrics_path.exists():
        return
    records = [json.loads(line) for line in metrics_path.read_text().splitlines()]
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    if cfg.kind in ("distill", "pretrain-teacher", "rl"):
        fig, ax = plt.subplots()
        for key in ("loss", "critic_loss", "generator_loss", "reward_raw_composite"):
            pts = [(r["iteration"], r[key]) for r in records if r.get(key) is not None]
            if pts:
                ax.plot([p[0] for p in pts], [p[1] for p in pts], label=key)
        ax.set_xlabel("iteration")
        ax.legend()
        fig.savefig(plots / "training.png", dpi=120)
        plt.close(fig)
    if cfg.kind == "eval":
        fig, ax = plt.subplots()
        ax.plot([r["chunk"] for r in records], [r["mse"] for r in records], marker="o")
        ax.set_xlabel("chunk")
        ax.set_ylabel("mse to reference")
        fig.savefig(plots / "drift.png", dpi=120)
        plt.close(fig)
