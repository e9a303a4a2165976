"""Group-relative policy optimization through the generator's own sampling
kernels.

Each iteration rolls out a group of trajectories per condition without
gradients, scores them with the analytic reward suite, normalizes every
reward dimension within the group, composes a weighted reward, and turns it
into clipped group-relative advantages. One stored transition per trajectory
is then replayed with gradients: the policy re-predicts endpoints at the
transition's upper level and descends a stop-gradient regression loss whose
gradient equals the advantage-weighted gradient of the transition kernel's
log-density. Two kernels are supported — the fresh-noise consistency
transition (final step excluded: its kernel is a point mass with no density)
and the stochastic reverse-drift transition, which admits every grid step
and an optional KL penalty to the frozen pre-RL policy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import torch

from .errors import ConfigError, DiracKernelError, DomainError, ShapeError
from .kernels import em_denoise_mean
from .network import DenoiserModel
from .numerics import DTYPE, RngStream
from .packing import (
    DEFAULT_WEIGHTING,
    WEIGHTING_PRESETS,
    WeightingFunction,
    build_interleaved,
    chunk_weights,
)
from .rewards import RewardSpec, evaluate_rewards
from .rollout import HistoryCache, RolloutRecord, _denoise_forward, autoregressive_rollout
from .schedule import NoiseSchedule, TimestepGrid, default_grid

POLICIES = ("consistency", "em")


@dataclass(frozen=True)
class RlConfig:
    group_size: int = 8
    conditions_per_step: int = 1
    n_chunks: int = 4
    iterations: int = 200
    lr: float = 1e-3
    grid: TimestepGrid = field(default_factory=lambda: default_grid(4))
    weighting: WeightingFunction = field(
        default_factory=lambda: WEIGHTING_PRESETS[DEFAULT_WEIGHTING]
    )
    policy: str = "consistency"
    em_sigma: float = 0.4
    em_beta: float = 0.0
    a_max: float = 5.0
    eps: float = 1e-4
    use_interleaved_history: bool = True
    optimizer: str = "sgd"
    seed: int = 0
    sched: NoiseSchedule = field(default_factory=NoiseSchedule)

    def __post_init__(self):
        if self.group_size < 2:
            raise ConfigError(f"group statistics need group_size >= 2, got {self.group_size}")
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.policy == "em" and self.em_sigma <= 0:
            raise ConfigError("the stochastic-drift policy needs em_sigma > 0")
        if self.lr <= 0 or self.a_max <= 0 or self.eps <= 0:
            raise ConfigError("lr, a_max and eps must all be positive")
        if self.conditions_per_step < 1:
            raise ConfigError("need at least one condition per step")


# ---------------------------------------------------------------------------
# group statistics


@dataclass
class RewardGroup:
    """Raw rewards of one rollout group and everything derived from them."""

    raw: torch.Tensor  # [G, M]
    normalized: torch.Tensor  # [G, M]
    composite: torch.Tensor  # [G]
    advantages: torch.Tensor  # [G], clipped
    unclipped: torch.Tensor  # [G]
    eps: float
    a_max: float

    @property
    def G(self) -> int:
        return self.raw.shape[0]

    @property
    def clip_fraction(self) -> float:
        return float((self.unclipped.abs() > self.a_max).to(DTYPE).mean())


def normalize_and_compose(
    raw: torch.Tensor, spec: RewardSpec, eps: float
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Per-dimension group normalization, then the |weight|-normalized sum.

    Population standard deviation throughout, so a group of two is
    well-defined with std = |r1 - r2| / 2.
    """
    if raw.dim() != 2 or raw.shape[0] < 2:
        raise ShapeError(f"raw rewards must be [G >= 2, M], got {tuple(raw.shape)}")
    mean = raw.mean(dim=0, keepdim=True)
    std = raw.std(dim=0, unbiased=False, keepdim=True)
    normalized = (raw - mean) / (std + eps)
    lam = spec.weight_vector()
    composite = normalized @ lam / lam.abs().sum()
    return normalized, composite


def advantages(composite: torch.Tensor, eps: float, a_max: float) -> Tuple[torch.Tensor, torch.Tensor]:
    """(clipped, unclipped) group-relative advantages of composite rewards."""
    if composite.dim() != 1 or composite.shape[0] < 2:
        raise ShapeError(f"composite must be [G >= 2], got {tuple(composite.shape)}")
    mean = composite.mean()
    std = composite.std(unbiased=False)
    unclipped = (composite - mean) / (std + eps)
    return unclipped.clamp(-a_max, a_max), unclipped


def build_reward_group(raw: torch.Tensor, spec: RewardSpec, eps: float, a_max: float) -> RewardGroup:
    normalized, composite = normalize_and_compose(raw, spec, eps)
    clipped, unclipped = advantages(composite, eps, a_max)
    return RewardGroup(raw, normalized, composite, clipped, unclipped, eps, a_max)


# ---------------------------------------------------------------------------
# rollouts and transition replay


def group_rollout(
    model: DenoiserModel,
    cond: torch.Tensor,  # [cond_dim] one shared condition
    group_size: int,
    grid: TimestepGrid,
    streams: Sequence[RngStream],
    n_chunks: int,
    sched: NoiseSchedule = NoiseSchedule(),
    transition: str = "consistency",
    em_sigma: float = 0.4,
) -> RolloutRecord:
    """G independent rollouts of the shared condition, batched on axis 0."""
    if group_size < 2:
        raise ConfigError(f"group_size must be >= 2, got {group_size}")
    if len(streams) != group_size:
        raise ConfigError(f"need one stream per rollout: {len(streams)} != {group_size}")
    cond_g = cond[None, :].expand(group_size, -1)
    return autoregressive_rollout(
        model, n_chunks, grid, cond_g, list(streams), sched=sched,
        transition=transition, em_sigma=em_sigma,
    )


def valid_transitions(grid: TimestepGrid, policy: str) -> List[int]:
    """Replayable grid transitions k (0-based): (tau_k -> tau_{k+1}).

    The consistency kernel at sigma(tau_{k+1}) = 0 is a point mass with no
    density to differentiate, so its final step is excluded; the stochastic
    drift kernel has variance at every step.
    """
    if policy not in POLICIES:
        raise ConfigError(f"policy must be one of {POLICIES}, got {policy!r}")
    if policy == "em":
        return list(range(grid.K - 1))
    ks = [k for k in range(grid.K - 1) if grid.tau[k + 1] > 0.0]
    if not ks:
        raise DiracKernelError(f"grid {grid.tau} has no transition with nonzero noise")
    return ks


def sample_transitions(stream: RngStream, grid: TimestepGrid, policy: str, count: int) -> List[int]:
    ks = valid_transitions(grid, policy)
    picks = stream.randints(0, len(ks), count)
    return [ks[int(i)] for i in picks]


def record_rows(record: RolloutRecord, idx: Sequence[int]) -> RolloutRecord:
    """A RolloutRecord restricted to the given batch rows (views)."""
    ii = torch.as_tensor(list(idx), dtype=torch.long)
    cache = HistoryCache(
        detached=record.cache.detached,
        chunk_ids=list(record.cache.chunk_ids),
        records=[[(k[ii], v[ii]) for k, v in layer] for layer in record.cache.records],
    )
    return RolloutRecord(
        grid=record.grid,
        cond=record.cond[ii],
        states=[st[:, ii] for st in record.states],
        endpoints=[ep[ii] for ep in record.endpoints],
        cache=cache,
    )


def policy_predictions(
    model: DenoiserModel,
    record: RolloutRecord,
    u: float,
    use_interleaved_history: bool,
) -> torch.Tensor:
    """Gradient-carrying endpoint predictions [B, T, tok, dim] at level u.

    With interleaved history the whole trajectory is re-encoded in one
    masked pass, so history participates in the supervised graph; without
    it each chunk reads the detached rollout cache.
    """
    if use_interleaved_history:
        seq = build_interleaved(record, u)
        out, _ = model.forward_layout(seq.layout, seq.data, record.cond, seq.mask)
        return torch.stack([out[:, seq.noisy_rows(t), :] for t in range(seq.n_chunks)], dim=1)
    k = record.grid.tau.index(u)
    outs = [
        _denoise_forward(model, record.state_at(t, k), u, t, record.cond, record.cache)
        for t in range(record.n_chunks)
    ]
    return torch.stack(outs, dim=1)


# ---------------------------------------------------------------------------
# policy losses (stop-gradient regression forms)


def _check_policy_shapes(x_theta: torch.Tensor, z: torch.Tensor, adv: torch.Tensor) -> torch.Tensor:
    if x_theta.dim() != 4 or x_theta.shape != z.shape:
        raise ShapeError(
            f"predictions and stored states must both be [B, T, tok, dim]; "
            f"got {tuple(x_theta.shape)} vs {tuple(z.shape)}"
        )
    adv = torch.as_tensor(adv, dtype=DTYPE)
    if adv.dim() == 0:
        adv = adv.expand(x_theta.shape[0])
    if adv.shape != (x_theta.shape[0],):
        raise ShapeError(f"advantages must be scalar or [B], got {tuple(adv.shape)}")
    return adv


def _chunk_sums(per_elem: torch.Tensor) -> torch.Tensor:
    return per_elem.sum(dim=(0, 2, 3))


def _weight_vector(weighting: WeightingFunction, x_theta: torch.Tensor, m: Optional[Sequence[float]]):
    t = x_theta.shape[1]
    counts = list(m) if m is not None else [x_theta.shape[2] * x_theta.shape[3]] * t
    return chunk_weights(weighting, counts), counts


def cmgrpo_loss(
    x_theta: torch.Tensor,  # [B, T, tok, dim], requires grad
    z_s: torch.Tensor,  # [B, T, tok, dim] stored state at the lower level
    s: float,
    adv: torch.Tensor,  # scalar or [B]
    weighting: WeightingFunction,
    m: Optional[Sequence[float]] = None,
    sched: NoiseSchedule = NoiseSchedule(),
) -> torch.Tensor:
    """Chunk-weighted sum of per-trajectory regression losses.

    The per-element gradient is -adv * alpha_s * (z_s - alpha_s x_theta) /
    sigma_s^2 — the advantage-weighted gradient of the consistency kernel's
    reduced log-density. With uniform weighting the weights normalize to one
    and the loss is the plain sum, so that identity is exact.
    """
    adv = _check_policy_shapes(x_theta, z_s, adv)
    a_s, sig_s = sched.alpha_sigma(s)
    if sig_s == 0.0:
        raise DiracKernelError(f"consistency kernel at s={s} is a point mass")
    coef = (adv * a_s / (2.0 * sig_s * sig_s))[:, None, None, None]
    target = (x_theta + coef * (z_s - a_s * x_theta)).detach()
    losses = _chunk_sums((x_theta - target) ** 2)
    w, _ = _weight_vector(weighting, x_theta, m)
    return (w * losses).sum()


def emgrpo_loss(
    x_theta: torch.Tensor,  # [B, T, tok, dim], requires grad
    x_ref: Optional[torch.Tensor],  # reference predictions (for the KL term)
    y_u: torch.Tensor,  # [B, T, tok, dim] stored state at the upper level
    y_s: torch.Tensor,  # [B, T, tok, dim] stored state at the lower level
    u: float,
    s: float,
    sigma: float,
    beta: float,
    adv: torch.Tensor,
    weighting: WeightingFunction,
    m: Optional[Sequence[float]] = None,
) -> torch.Tensor:
    """Stochastic-drift analog of cmgrpo_loss, plus beta x reference KL.

    The regression gradient equals -adv * (y_s - mean) / (sigma^2 (u - s)),
    the advantage-weighted gradient of the drift kernel's log-density in its
    mean; the KL to the frozen reference kernel is the exact Gaussian form
    (shared variance), differentiable through the policy mean only.
    """
    if sigma <= 0:
        raise DiracKernelError(f"drift kernel with sigma={sigma} is a point mass")
    if not s < u:
        raise DomainError(f"transition needs s < u, got u={u}, s={s}")
    adv = _check_policy_shapes(x_theta, y_s, adv)
    delta = u - s
    mean_theta = em_denoise_mean(y_u, x_theta, u, s, sigma)
    coef = (adv / (2.0 * sigma * sigma * delta))[:, None, None, None]
    target = (mean_theta + coef * (y_s - mean_theta)).detach()
    per_elem = (mean_theta - target) ** 2
    if beta != 0.0:
        if x_ref is None:
            raise ConfigError("reference predictions are required when beta != 0")
        mean_ref = em_denoise_mean(y_u, x_ref, u, s, sigma).detach()
        per_elem = per_elem + beta * (mean_theta - mean_ref) ** 2 / (2.0 * sigma * sigma * delta)
    losses = _chunk_sums(per_elem)
    w, _ = _weight_vector(weighting, x_theta, m)
    return (w * losses).sum()


# ---------------------------------------------------------------------------
# the training step and loop


def rl_step(
    model: DenoiserModel,
    cfg: RlConfig,
    conds: torch.Tensor,  # [N, cond_dim]
    gts: torch.Tensor,  # [N, T, tok, dim] condition-implied references
    spec: RewardSpec,
    stream: RngStream,
    opt: torch.optim.Optimizer,
    ref_model: Optional[DenoiserModel] = None,
) -> Dict[str, object]:
    """One update over a batch of conditions, group_size rollouts each."""
    if cfg.policy == "em" and cfg.em_beta != 0.0 and ref_model is None:
        raise ConfigError("em_beta != 0 needs the frozen reference model")
    grid, g = cfg.grid, cfg.group_size
    tok, dim = model.cfg.tokens_per_chunk, model.cfg.dim
    m = [tok * dim] * cfg.n_chunks
    w = chunk_weights(cfg.weighting, m)
    den_per_traj = float((w * torch.tensor(m, dtype=DTYPE)).sum())

    total = torch.zeros((), dtype=DTYPE)
    denom = 0.0
    raw_sum = None
    comp_all: List[torch.Tensor] = []
    clip_fracs: List[float] = []
    for ci in range(conds.shape[0]):
        cstream = stream.child(ci)
        rollout_streams = [cstream.child(i) for i in range(g)]
        with torch.no_grad():
            record = group_rollout(
                model, conds[ci], g, grid, rollout_streams, cfg.n_chunks,
                sched=cfg.sched, transition=cfg.policy, em_sigma=cfg.em_sigma,
            )
        raw = evaluate_rewards(spec, record.endpoints_tensor(), gts[ci])
        grp = build_reward_group(raw, spec, cfg.eps, cfg.a_max)
        raw_sum = raw.sum(dim=0) if raw_sum is None else raw_sum + raw.sum(dim=0)
        comp_all.append(grp.composite)
        clip_fracs.append(grp.clip_fraction)

        ks = sample_transitions(cstream.child(g), grid, cfg.policy, g)
        for k in sorted(set(ks)):
            idx = [i for i in range(g) if ks[i] == k]
            u, s = grid.tau[k], grid.tau[k + 1]
            sub = record_rows(record, idx)
            adv = grp.advantages[torch.as_tensor(idx, dtype=torch.long)]
            x_theta = policy_predictions(model, sub, u, cfg.use_interleaved_history)
            if cfg.policy == "consistency":
                z_s = torch.stack([sub.state_at(t, k + 1) for t in range(cfg.n_chunks)], dim=1)
                total = total + cmgrpo_loss(
                    x_theta, z_s, s, adv, cfg.weighting, m, sched=cfg.sched
                )
            else:
                y_u = torch.stack([sub.state_at(t, k) for t in range(cfg.n_chunks)], dim=1)
                y_s = torch.stack([sub.state_at(t, k + 1) for t in range(cfg.n_chunks)], dim=1)
                x_ref = None
                if cfg.em_beta != 0.0:
                    with torch.no_grad():
                        x_ref = policy_predictions(ref_model, sub, u, cfg.use_interleaved_history)
                total = total + emgrpo_loss(
                    x_theta, x_ref, y_u, y_s, u, s, cfg.em_sigma, cfg.em_beta,
                    adv, cfg.weighting, m,
                )
            denom += len(idx) * den_per_traj

    loss = total / denom
    opt.zero_grad(set_to_none=True)
    loss.backward()
    opt.step()

    comp = torch.cat(comp_all)
    n_groups = conds.shape[0] * g
    reward_means = {d: float(raw_sum[j]) / n_groups for j, d in enumerate(spec.dimensions)}
    lam = spec.weight_vector()
    raw_composite = float((raw_sum / n_groups) @ lam / lam.abs().sum())
    return {
        "loss": float(loss.detach()),
        "composite_mean": float(comp.mean()),
        "composite_std": float(comp.std(unbiased=False)),
        "reward_raw_composite": raw_composite,
        "reward_means": reward_means,
        "clip_fraction": float(sum(clip_fracs) / len(clip_fracs)),
    }


def train_rl(
    cfg: RlConfig,
    model: DenoiserModel,
    condition_source,
    spec: RewardSpec,
    ref_model: Optional[DenoiserModel] = None,
    optimizer_kind: Optional[str] = None,
) -> List[Dict[str, object]]:
    """Run cfg.iterations policy updates; one metric record per iteration.

    condition_source(stream, n) must return (conds [n, cond_dim],
    gts [n, T, tok, dim]). Iteration i derives all randomness from child i.
    """
    from .distill import make_optimizer

    opt = make_optimizer(optimizer_kind or cfg.optimizer, model.parameters(), cfg.lr)
    root = RngStream(cfg.seed, 0x6690)
    records: List[Dict[str, object]] = []
    for i in range(1, cfg.iterations + 1):
        it = root.child(i)
        conds, gts = condition_source(it.child(0), cfg.conditions_per_step)
        rec = rl_step(model, cfg, conds, gts, spec, it.child(1), opt, ref_model=ref_model)
        rec["iteration"] = i
        records.append(rec)
    return records
