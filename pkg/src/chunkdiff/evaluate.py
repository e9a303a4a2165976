"""Evaluation: long-horizon drift curves and before/after reward comparisons.

Drift is the per-chunk MSE between an autoregressive rollout and the
condition-implied ground truth as the horizon extends past the training
length; oracle mode feeds the ground-truth chunks back as history, isolating
per-chunk generation error from compounding history error. The reward-suite
evaluator scores fixed-stream rollouts per condition so two checkpoints can
be compared pairwise; the sign test gives the significance of consistent
improvement across conditions.
"""

from __future__ import annotations

import math
from typing import Dict, Optional

import torch

from .network import DenoiserModel
from .numerics import RngStream
from .rewards import (
    RewardSpec,
    _clarity,
    _dynamic_degree,
    _motion_smoothness,
    _range_quality,
    evaluate_rewards,
    to_frames,
)
from .rollout import autoregressive_rollout
from .schedule import NoiseSchedule, TimestepGrid
from .world import BlobWorld


def eval_long_horizon(
    model: DenoiserModel,
    world: BlobWorld,
    conds: torch.Tensor,  # [N, 4]
    t_eval: int,
    grid: TimestepGrid,
    seed: int,
    oracle: bool = False,
    sched: NoiseSchedule = NoiseSchedule(),
) -> Dict[str, object]:
    """Roll t_eval chunks per condition; report per-chunk error and rewards.

    Returns per-chunk mean squared error to the ground-truth trajectory and
    per-chunk within-chunk reward dimensions (averaged over conditions).
    With oracle=True the history cache is fed ground-truth chunks, so the
    curve shows only per-chunk generation error.
    """
    n = conds.shape[0]
    gt = world.trajectories(conds, t_eval)  # [N, T_eval, tok, dim]
    streams = [RngStream(seed, 0xEAA1).child(i) for i in range(n)]
    record = autoregressive_rollout(
        model, t_eval, grid, conds, streams, sched=sched,
        history_override=gt if oracle else None,
    )
    eps = record.endpoints_tensor()  # [N, T_eval, tok, dim]
    mse = ((eps - gt) ** 2).mean(dim=(0, 2, 3))  # [T_eval]
    dims = {"dynamic_degree": [], "motion_smoothness": [], "range_quality": [], "clarity": []}
    for t in range(t_eval):
        acc = {k: 0.0 for k in dims}
        for i in range(n):
            frames = to_frames(eps[i, t : t + 1], world.grid_size)
            acc["dynamic_degree"] += _dynamic_degree(frames)
            acc["motion_smoothness"] += _motion_smoothness(frames)
            acc["range_quality"] += _range_quality(frames)
            acc["clarity"] += _clarity(frames)
        for k in dims:
            dims[k].append(acc[k] / n)
    return {
        "t_eval": t_eval,
        "oracle": oracle,
        "per_chunk_mse": [float(v) for v in mse],
        "per_chunk_rewards": dims,
    }


def drift_at(result: Dict[str, object], chunk_index: int) -> float:
    return float(result["per_chunk_mse"][chunk_index])


# ---------------------------------------------------------------------------
# reward-suite comparison between checkpoints


def eval_reward_suite(
    model: DenoiserModel,
    world: BlobWorld,
    spec: RewardSpec,
    conds: torch.Tensor,  # [N, 4]
    grid: TimestepGrid,
    seed: int,
    group: int = 4,
    n_chunks: Optional[int] = None,
    sched: NoiseSchedule = NoiseSchedule(),
) -> torch.Tensor:
    """Per-condition mean raw reward dimensions [N, M] on fixed streams."""
    t = world.n_chunks if n_chunks is None else n_chunks
    rows = []
    for i in range(conds.shape[0]):
        streams = [RngStream(seed, 0x5C02E).child(i).child(j) for j in range(group)]
        cond_g = conds[i][None, :].expand(group, -1)
        record = autoregressive_rollout(model, t, grid, cond_g, streams, sched=sched)
        raw = evaluate_rewards(spec, record.endpoints_tensor(), world.trajectory(conds[i], t))
        rows.append(raw.mean(dim=0))
    return torch.stack(rows)


def paired_composite(
    before: torch.Tensor,  # [N, M] per-condition raw reward means
    after: torch.Tensor,  # [N, M]
    spec: RewardSpec,
    eps: float = 1e-8,
) -> Dict[str, object]:
    """Pairwise comparison of two checkpoints' reward suites.

    Raw dimensions are standardized with statistics pooled over both
    checkpoints and all conditions (so neither run defines the scale), then
    combined with the spec weights. Returns per-condition composite
    differences and an exact one-sided sign test for "after > before".
    """
    pooled = torch.cat([before, after], dim=0)
    mean = pooled.mean(dim=0, keepdim=True)
    std = pooled.std(dim=0, unbiased=False, keepdim=True) + eps
    lam = spec.weight_vector()
    comp_b = ((before - mean) / std) @ lam / lam.abs().sum()
    comp_a = ((after - mean) / std) @ lam / lam.abs().sum()
    diffs = comp_a - comp_b
    wins = int((diffs > 0).sum())
    ties = int((diffs == 0).sum())
    n_eff = diffs.numel() - ties
    p = sign_test_p(wins, n_eff) if n_eff > 0 else 1.0
    return {
        "composite_before": [float(v) for v in comp_b],
        "composite_after": [float(v) for v in comp_a],
        "diffs": [float(v) for v in diffs],
        "mean_before": float(comp_b.mean()),
        "mean_after": float(comp_a.mean()),
        "wins": wins,
        "n_effective": n_eff,
        "p_value": p,
    }


def sign_test_p(wins: int, n: int) -> float:
    """One-sided exact binomial P(X >= wins) for X ~ Binomial(n, 1/2)."""
    if not 0 <= wins <= n:
        raise ValueError(f"wins={wins} outside [0, {n}]")
    total = sum(math.comb(n, k) for k in range(wins, n + 1))
    return total / (2.0**n)
