"""Bidirectional teacher pretraining by endpoint regression.

The teacher sees whole sequences with full attention. Each step perturbs a
data batch to a uniformly drawn noise level and regresses the model's
endpoint prediction onto the clean chunks. Held-out loss is tracked on a
fixed perturbation set so successive evaluations are comparable, and
sustained blow-ups (loss stuck above 10x its initial value) abort the run
rather than writing a junk checkpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import torch

from .errors import ConfigError, TrainingDivergedError
from .network import DenoiserModel
from .numerics import DTYPE, RngStream
from .schedule import NoiseSchedule, alpha_sigma_map

DIVERGENCE_FACTOR = 10.0
DIVERGENCE_PATIENCE = 100


@dataclass(frozen=True)
class PretrainConfig:
    iterations: int = 3000
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "adam"
    eval_every: int = 200
    eval_samples: int = 256
    seed: int = 0
    plateau_patience: int = 0  # 0 disables early stopping
    plateau_rel_improvement: float = 0.005
    sched: NoiseSchedule = NoiseSchedule()

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise ConfigError("iterations and batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")


def fixed_eval_set(
    dataset, cfg: PretrainConfig
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """A frozen (x, cond, levels, eps) tuple for comparable held-out evals."""
    st = RngStream(cfg.seed, 0xE7A1)
    n = min(cfg.eval_samples, len(dataset))
    x, cond = dataset.data[:n], dataset.conds[:n]
    levels = st.uniform(n, x.shape[1])
    eps = st.randn(*x.shape)
    return x, cond, levels, eps


def heldout_endpoint_mse(
    model: DenoiserModel,
    x: torch.Tensor,  # [N, T, tok, dim]
    cond: torch.Tensor,  # [N, cond_dim]
    levels: torch.Tensor,  # [N, T]
    eps: torch.Tensor,
    sched: NoiseSchedule = NoiseSchedule(),
    batch: int = 64,
) -> float:
    """Mean squared endpoint error on fixed perturbations."""
    a, s = alpha_sigma_map(sched, levels)
    z = a[:, :, None, None] * x + s[:, :, None, None] * eps
    total, n = 0.0, x.shape[0]
    with torch.no_grad():
        for i in range(0, n, batch):
            pred = model.endpoint_full(z[i : i + batch], levels[i : i + batch], cond[i : i + batch])
            total += float(((pred - x[i : i + batch]) ** 2).sum())
    return total / x.numel()


def pretrain_teacher(
    cfg: PretrainConfig, model: DenoiserModel, dataset, heldout
) -> List[Dict[str, object]]:
    """Train `model` in place; returns one record per iteration or eval.

    Divergence guard: if the training loss stays above DIVERGENCE_FACTOR x
    the first iteration's loss for DIVERGENCE_PATIENCE consecutive
    iterations, training aborts. Optional plateau stop: quit once the
    held-out MSE improves by less than plateau_rel_improvement (relative)
    for plateau_patience consecutive evals.
    """
    from .distill import make_optimizer

    opt = make_optimizer(cfg.optimizer, model.parameters(), cfg.lr)
    root = RngStream(cfg.seed, 0x7EAC)
    ex, ec, el, ee = fixed_eval_set(heldout, cfg)
    records: List[Dict[str, object]] = []
    initial: Optional[float] = None
    bad_streak = 0
    best_eval = float("inf")
    stale_evals = 0
    for i in range(1, cfg.iterations + 1):
        it = root.child(i)
        x, cond = dataset.sample_batch(it.child(0), cfg.batch_size)
        levels = it.child(1).uniform(x.shape[0], x.shape[1])
        a, s = alpha_sigma_map(cfg.sched, levels)
        z = a[:, :, None, None] * x + s[:, :, None, None] * it.child(2).randn(*x.shape)
        pred = model.endpoint_full(z, levels, cond)
        loss = ((pred - x) ** 2).mean()
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        lv = float(loss.detach())
        if not math.isfinite(lv):
            raise TrainingDivergedError(f"non-finite loss {lv} at iteration {i}")
        if initial is None:
            initial = lv
        bad_streak = bad_streak + 1 if lv > DIVERGENCE_FACTOR * initial else 0
        if bad_streak >= DIVERGENCE_PATIENCE:
            raise TrainingDivergedError(
                f"loss {lv:.3e} > {DIVERGENCE_FACTOR}x initial {initial:.3e} "
                f"for {bad_streak} consecutive iterations (at iteration {i})"
            )
        rec: Dict[str, object] = {"iteration": i, "loss": lv}
        if i % cfg.eval_every == 0 or i == cfg.iterations:
            ev = heldout_endpoint_mse(model, ex, ec, el, ee, sched=cfg.sched)
            rec["heldout_mse"] = ev
            if ev < best_eval * (1.0 - cfg.plateau_rel_improvement):
                best_eval, stale_evals = ev, 0
            else:
                best_eval = min(best_eval, ev)
                stale_evals += 1
            records.append(rec)
            if cfg.plateau_patience and stale_evals >= cfg.plateau_patience:
                break
        else:
            records.append(rec)
    return records


def data_variance(x: torch.Tensor) -> float:
    """Mean squared error of the best constant-per-position predictor."""
    mean = x.mean(dim=0, keepdim=True)
    return float(((x - mean) ** 2).mean())
