"""Score-distillation training of the few-step causal generator.

Each iteration has three stages. Stage 1 produces generator samples under
one of five history paradigms (how chunk t gets to see its past). Stage 2
updates the critic — a bidirectional copy of the denoiser that tracks the
generator's own output distribution — by denoising regression on those
samples. Stage 3, gated to every r-th iteration, perturbs the student's
endpoint predictions to a fresh noise level, asks the frozen teacher and the
critic for their endpoint readings, and descends the stop-gradient
regression loss whose gradient is the (normalized) teacher-minus-critic
score direction, aggregated across chunks by the configured chunk weighting.

History paradigms
    teacher_forcing                 rollout against ground-truth history
    diffusion_forcing               ground-truth chunks, independent levels
    self_forcing                    self rollout, history served detached
    diffusion_forcing_self_rollout  perturbed self-rollout endpoints
    interleaved                     self rollout re-encoded alternately with
                                    its noisy states in one masked pass, so
                                    gradients also flow through history
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import torch

from .errors import ConfigError, ShapeError
from .layout import CLEAN, NOISY, Block, build_mask, token_meta
from .network import DenoiserModel
from .numerics import DTYPE, RngStream
from .packing import (
    DEFAULT_WEIGHTING,
    WEIGHTING_PRESETS,
    WeightingFunction,
    aggregate_chunk_loss,
    build_interleaved,
    chunk_weights,
)
from .rollout import RolloutRecord, autoregressive_rollout
from .schedule import NoiseSchedule, TimestepGrid, alpha_sigma_map, default_grid

HISTORY_MODES = (
    "teacher_forcing",
    "diffusion_forcing",
    "self_forcing",
    "diffusion_forcing_self_rollout",
    "interleaved",
)

NORMALIZER_FLOOR = 1e-8


@dataclass(frozen=True)
class DistillConfig:
    paradigm: str = "interleaved"
    n_chunks: int = 4
    batch_size: int = 4
    iterations: int = 2000
    ttur_ratio: int = 2  # critic updates per generator update
    # both nets start as teacher copies, so the generator loss starts near
    # zero and only shrinks once the critic has drifted onto the student's
    # samples; the critic rate leads the student rate so that happens early
    lr_student: float = 1e-2
    lr_critic: float = 6e-2
    grid: TimestepGrid = field(default_factory=lambda: default_grid(4))
    weighting: WeightingFunction = field(
        default_factory=lambda: WEIGHTING_PRESETS[DEFAULT_WEIGHTING]
    )
    optimizer: str = "sgd"
    seed: int = 0
    skip_final_endpoint_call: bool = False
    sched: NoiseSchedule = field(default_factory=NoiseSchedule)

    def __post_init__(self):
        if self.paradigm not in HISTORY_MODES:
            raise ConfigError(f"unknown paradigm {self.paradigm!r}; pick one of {HISTORY_MODES}")
        if self.ttur_ratio < 1:
            raise ConfigError(f"ttur_ratio must be >= 1, got {self.ttur_ratio}")
        if self.lr_student <= 0 or self.lr_critic <= 0:
            raise ConfigError("learning rates must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.n_chunks < 1 or self.batch_size < 1 or self.iterations < 0:
            raise ConfigError("n_chunks, batch_size must be >= 1 and iterations >= 0")


def make_optimizer(kind: str, params, lr: float) -> torch.optim.Optimizer:
    if kind == "sgd":
        return torch.optim.SGD(params, lr=lr)
    if kind == "adam":
        return torch.optim.Adam(params, lr=lr)
    raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {kind!r}")


# ---------------------------------------------------------------------------
# the distribution-matching loss


@dataclass
class DmdBatch:
    """Endpoint triple for one generator step.

    x_student carries gradient; the teacher and critic endpoints are
    detached readings at the same perturbed state. normalizer is the
    per-sample mean |x_student - x_teacher|, detached and floored, so the
    update direction has a dimension-free scale.
    """

    x_student: torch.Tensor  # [B, T, tok, dim], requires grad
    x_teacher: torch.Tensor  # [B, T, tok, dim], detached
    x_critic: torch.Tensor  # [B, T, tok, dim], detached
    normalizer: torch.Tensor  # [B], detached, > 0


def dmd_batch(
    x_student: torch.Tensor, x_teacher: torch.Tensor, x_critic: torch.Tensor
) -> DmdBatch:
    if not (x_student.shape == x_teacher.shape == x_critic.shape) or x_student.dim() != 4:
        raise ShapeError(
            f"endpoint shapes must agree as [B, T, tok, dim]; got {tuple(x_student.shape)}, "
            f"{tuple(x_teacher.shape)}, {tuple(x_critic.shape)}"
        )
    norm = (x_student - x_teacher).abs().mean(dim=(1, 2, 3)).detach().clamp_min(NORMALIZER_FLOOR)
    return DmdBatch(x_student, x_teacher.detach(), x_critic.detach(), norm)


def dmd_loss(batch: DmdBatch) -> torch.Tensor:
    """Per-chunk summed stop-gradient regression losses, shape [T].

    The target is the student's own prediction nudged along the normalized
    teacher-minus-critic direction and detached, so the squared error's
    gradient is exactly -2 * (teacher - critic) / normalizer per element.
    """
    direction = (batch.x_teacher - batch.x_critic) / batch.normalizer[:, None, None, None]
    target = (batch.x_student + direction).detach()
    per_elem = (batch.x_student - target) ** 2
    return per_elem.sum(dim=(0, 2, 3))


# ---------------------------------------------------------------------------
# stage 1: paradigm-dependent sample generation


@dataclass
class StageOne:
    """What stage 1 hands to the rest of the iteration."""

    paradigm: str
    cond: torch.Tensor  # [B, cond_dim]
    critic_samples: torch.Tensor  # [B, T, tok, dim], detached
    rollout: Optional[RolloutRecord] = None
    gt: Optional[torch.Tensor] = None  # ground-truth chunks for the *_forcing data modes
    noisy_levels: Optional[torch.Tensor] = None  # [B, T] for the independent-level modes
    noisy_states: Optional[torch.Tensor] = None  # [B, T, tok, dim] matching noisy_levels


def stage_one(
    paradigm: str,
    student: DenoiserModel,
    gt: torch.Tensor,  # [B, T, tok, dim] ground truth (used by data-driven modes)
    cond: torch.Tensor,  # [B, cond_dim]
    cfg: DistillConfig,
    stream: RngStream,
) -> StageOne:
    if paradigm not in HISTORY_MODES:
        raise ConfigError(f"unknown paradigm {paradigm!r}")
    b, t = cond.shape[0], cfg.n_chunks
    tok, dim = student.cfg.tokens_per_chunk, student.cfg.dim

    def run_rollout(history_override: Optional[torch.Tensor]) -> RolloutRecord:
        streams = [stream.child(i) for i in range(b)]
        return autoregressive_rollout(
            student, t, cfg.grid, cond, streams, sched=cfg.sched,
            skip_final_endpoint_call=cfg.skip_final_endpoint_call,
            history_override=history_override,
        )

    if paradigm == "teacher_forcing":
        rec = run_rollout(history_override=gt)
        return StageOne(paradigm, cond, rec.endpoints_tensor().detach(), rollout=rec, gt=gt)

    if paradigm in ("self_forcing", "interleaved"):
        rec = run_rollout(history_override=None)
        return StageOne(paradigm, cond, rec.endpoints_tensor().detach(), rollout=rec)

    # Independent per-chunk levels over either ground truth or self-rollout endpoints.
    if paradigm == "diffusion_forcing":
        base = gt
        rec = None
    else:  # diffusion_forcing_self_rollout
        rec = run_rollout(history_override=None)
        base = rec.endpoints_tensor().detach()
    levels = stream.uniform(b, t)
    a, sig = alpha_sigma_map(cfg.sched, levels)
    eps = stream.randn(b, t, tok, dim)
    states = a[:, :, None, None] * base + sig[:, :, None, None] * eps
    if paradigm == "diffusion_forcing":
        with torch.no_grad():
            samples = _independent_level_forward(student, states, levels, cond).detach()
    else:
        samples = base
    return StageOne(
        paradigm, cond, samples, rollout=rec, gt=gt, noisy_levels=levels, noisy_states=states
    )


def _independent_level_forward(
    model: DenoiserModel,
    states: torch.Tensor,  # [B, T, tok, dim]
    levels: torch.Tensor,  # [B, T]
    cond: torch.Tensor,
) -> torch.Tensor:
    """All-noisy causal forward where every chunk has its own level."""
    b, t, tok, dim = states.shape
    layout = [Block(i, NOISY, tok, 1.0) for i in range(t)]
    mask = build_mask("diffusion_forcing", layout)
    _, chunk_ids, tok_ids = token_meta(layout)
    out, _ = model.forward_packed(
        states.reshape(b, t * tok, dim),
        levels.repeat_interleave(tok, dim=-1),
        chunk_ids,
        tok_ids,
        cond,
        mask,
    )
    return out.reshape(b, t, tok, dim)


# ---------------------------------------------------------------------------
# stage 2: critic update


def fake_score_step(
    critic: DenoiserModel,
    samples: torch.Tensor | RolloutRecord,  # [B, T, tok, dim] generator samples
    cond: torch.Tensor,
    stream: RngStream,
    opt: torch.optim.Optimizer,
    sched: NoiseSchedule = NoiseSchedule(),
) -> float:
    """One denoising-regression update of the critic on generator samples."""
    x = samples.endpoints_tensor() if isinstance(samples, RolloutRecord) else samples
    x = x.detach()
    if x.dim() != 4:
        raise ShapeError(f"samples must be [B, T, tok, dim], got {tuple(x.shape)}")
    n = float(stream.uniform())
    a, sig = sched.alpha_sigma(n)
    z = a * x + sig * stream.randn(*x.shape)
    pred = critic.endpoint_full(z, torch.full((x.shape[1],), n, dtype=DTYPE), cond)
    loss = ((pred - x) ** 2).mean()
    opt.zero_grad(set_to_none=True)
    loss.backward()
    opt.step()
    return float(loss.detach())


# ---------------------------------------------------------------------------
# stage 3: generator update


def student_predictions(
    student: DenoiserModel, s1: StageOne, u: float
) -> torch.Tensor:
    """Re-predict every chunk's endpoint with gradient, per the paradigm.

    For the rollout paradigms u picks which stored grid level is re-encoded;
    the independent-level paradigms ignore u and reuse their stage-1 states.
    """
    cond = s1.cond
    if s1.paradigm in ("diffusion_forcing", "diffusion_forcing_self_rollout"):
        return _independent_level_forward(student, s1.noisy_states, s1.noisy_levels, cond)

    rec = s1.rollout
    tok = student.cfg.tokens_per_chunk
    if s1.paradigm == "self_forcing":
        k = rec.grid.tau.index(u)
        outs = []
        for t in range(rec.n_chunks):
            z = rec.state_at(t, k)
            block = [Block(t, NOISY, tok, u)]
            # history comes from the detached cache; no clean block is re-encoded
            ctx = rec.cache.packed(upto=t)
            n_ctx = 0 if ctx is None else ctx[0][0].shape[2]
            mask = torch.ones(tok, n_ctx + tok, dtype=torch.bool)
            out, _ = student.forward_layout(block, z, cond, mask, ctx)
            outs.append(out)
        return torch.stack(outs, dim=1)

    if s1.paradigm == "teacher_forcing":
        k = rec.grid.tau.index(u)
        layout: List[Block] = []
        parts: List[torch.Tensor] = []
        for t in range(rec.n_chunks):
            layout.append(Block(t, NOISY, tok, u))
            parts.append(rec.state_at(t, k))
            if t + 1 < rec.n_chunks:
                layout.append(Block(t, CLEAN, tok, 0.0))
                parts.append(s1.gt[:, t])
        mask = build_mask("teacher_forcing", layout)
        out, _ = student.forward_layout(layout, torch.cat(parts, dim=1), cond, mask)
        return torch.stack(
            [out[:, 2 * t * tok : (2 * t + 1) * tok, :] for t in range(rec.n_chunks)], dim=1
        )

    seq = build_interleaved(rec, u)
    out, _ = student.forward_layout(seq.layout, seq.data, cond, seq.mask)
    return torch.stack(
        [out[:, seq.noisy_rows(t), :] for t in range(seq.n_chunks)], dim=1
    )


def generator_step(
    student: DenoiserModel,
    teacher: DenoiserModel,
    critic: DenoiserModel,
    s1: StageOne,
    cfg: DistillConfig,
    stream: RngStream,
    opt: torch.optim.Optimizer,
) -> float:
    """One chunk-weighted distribution-matching update of the student."""
    grid = cfg.grid
    u = grid.tau[stream.randint(0, grid.K - 1)]
    s = u * float(stream.uniform())
    x_student = student_predictions(student, s1, u)
    b, t, tok, dim = x_student.shape
    a_s, sig_s = cfg.sched.alpha_sigma(s)
    z_s = (a_s * x_student + sig_s * stream.randn(b, t, tok, dim)).detach()
    levels = torch.full((t,), s, dtype=DTYPE)
    with torch.no_grad():
        x_teacher = teacher.endpoint_full(z_s, levels, s1.cond)
        x_critic = critic.endpoint_full(z_s, levels, s1.cond)
    losses = dmd_loss(dmd_batch(x_student, x_teacher, x_critic))
    m = [b * tok * dim] * t
    w = chunk_weights(cfg.weighting, m)
    total = aggregate_chunk_loss(losses, w, m)
    opt.zero_grad(set_to_none=True)
    total.backward()
    opt.step()
    return float(total.detach())


# ---------------------------------------------------------------------------
# the training loop


def train_distill(
    cfg: DistillConfig,
    student: DenoiserModel,
    critic: DenoiserModel,
    teacher: DenoiserModel,
    dataset,
) -> List[Dict[str, object]]:
    """Run cfg.iterations training iterations; returns one record per iteration.

    The teacher is frozen for the whole run. Iteration i (1-based) derives
    every draw from a child stream of i, so runs are reproducible and the
    paradigms stay RNG-aligned for sweeps. The generator updates only when
    i is a multiple of the critic-to-generator ratio.
    """
    for p in teacher.parameters():
        p.requires_grad_(False)
    opt_student = make_optimizer(cfg.optimizer, student.parameters(), cfg.lr_student)
    opt_critic = make_optimizer(cfg.optimizer, critic.parameters(), cfg.lr_critic)
    root = RngStream(cfg.seed, 0xD157)
    records: List[Dict[str, object]] = []
    for i in range(1, cfg.iterations + 1):
        it = root.child(i)
        gt, cond = dataset.sample_batch(it.child(0), cfg.batch_size)
        s1 = stage_one(cfg.paradigm, student, gt, cond, cfg, it.child(1))
        critic_loss = fake_score_step(
            critic, s1.critic_samples, cond, it.child(2), opt_critic, sched=cfg.sched
        )
        gen_loss: Optional[float] = None
        if i % cfg.ttur_ratio == 0:
            gen_loss = generator_step(student, teacher, critic, s1, cfg, it.child(3), opt_student)
        records.append({"iteration": i, "critic_loss": critic_loss, "generator_loss": gen_loss})
    return records
