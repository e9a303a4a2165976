"""Interleaved-sequence construction and chunk-wise loss weighting.

The training pass for the interleaved paradigm packs, for one rollout, the
alternating sequence (noisy_1, clean_1, noisy_2, clean_2, ..., noisy_T):
noisy block t is the rollout's stored state of chunk t at the sampled level u
and clean block t is the rollout's endpoint for chunk t (the last chunk
contributes only its noisy block). The mask is the interleaved paradigm rule,
so history stays inside the supervised computation graph while clean blocks
still see exactly what an inference cache would.

Chunk-wise weighting: chunk j's participation score is the fraction of all
sequence elements that belong to chunks j..J (p_1 = 1, decreasing). A
weighting function maps the participation profile to nonnegative raw weights,
which are normalized so the average per-element weight is one, and the final
loss is the weighted mean sum(w_j * loss_j) / sum(w_j * m_j).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Sequence, Tuple

import torch

from .errors import DomainError, LevelError, ShapeError, WeightingError
from .layout import CLEAN, NOISY, Block, build_mask
from .numerics import DTYPE, RngStream
from .rollout import RolloutRecord

_MC_DRAWS = 1_000_000
_MC_SEED = 0x5EEDED  # fixed: raw weights must be identical across runs


@dataclass(frozen=True)
class WeightingFunction:
    """family "shift" (param alpha), "mode" (param s), or "logit_normal"
    (params mu, sigma). `shift_reading` selects how shift raw weights are
    read: "value" (default) uses the mapped value pi_alpha(p_j) directly;
    "density" histograms the shift-transformed uniform like the other
    families."""

    family: str
    alpha: float = 0.0
    s: float = 0.0
    mu: float = 0.0
    sigma: float = 1.0
    shift_reading: str = "value"

    def __post_init__(self):
        if self.family not in ("shift", "mode", "logit_normal"):
            raise WeightingError(f"unknown weighting family {self.family!r}")
        if self.shift_reading not in ("value", "density"):
            raise WeightingError(f"unknown shift reading {self.shift_reading!r}")
        if self.family == "logit_normal" and self.sigma <= 0:
            raise WeightingError(f"logit_normal needs sigma > 0, got {self.sigma}")


WEIGHTING_PRESETS = {
    "mode(-0.54)": WeightingFunction("mode", s=-0.54),
    "mode(0.81)": WeightingFunction("mode", s=0.81),
    "logit-normal(0,1)": WeightingFunction("logit_normal", mu=0.0, sigma=1.0),
    "shift(1)": WeightingFunction("shift", alpha=1.0),
    "shift(0)": WeightingFunction("shift", alpha=0.0),
    "shift(-1)": WeightingFunction("shift", alpha=-1.0),
}
DEFAULT_WEIGHTING = "shift(-1)"


def parse_weighting(text: str) -> WeightingFunction:
    """Parse "family(params)" strings: shift(a), mode(s), logit-normal(mu,sigma)."""
    t = text.strip()
    if t in WEIGHTING_PRESETS:
        return WEIGHTING_PRESETS[t]
    if "(" not in t or not t.endswith(")"):
        raise WeightingError(f"cannot parse weighting {text!r}")
    family, args = t[:-1].split("(", 1)
    try:
        vals = [float(v) for v in args.split(",")] if args else []
    except ValueError:
        raise WeightingError(f"cannot parse weighting parameters in {text!r}")
    family = family.strip().replace("-", "_")
    if family == "shift" and len(vals) == 1:
        return WeightingFunction("shift", alpha=vals[0])
    if family == "mode" and len(vals) == 1:
        return WeightingFunction("mode", s=vals[0])
    if family == "logit_normal" and len(vals) == 2:
        return WeightingFunction("logit_normal", mu=vals[0], sigma=vals[1])
    raise WeightingError(f"cannot parse weighting {text!r}")


@dataclass
class InterleavedSequence:
    """The packed alternating layout for one rollout at level u."""

    layout: List[Block]
    data: torch.Tensor  # [B, L, dim]
    u: float
    mask: torch.Tensor  # [L, L]
    source: RolloutRecord

    @property
    def n_chunks(self) -> int:
        return (len(self.layout) + 1) // 2

    def noisy_rows(self, t: int) -> slice:
        tok = self.layout[0].n_tokens
        return slice(2 * t * tok, (2 * t + 1) * tok)

    def unpack(self) -> Tuple[List[torch.Tensor], List[torch.Tensor]]:
        """Recover (noisy states at u, clean endpoints) exactly as packed."""
        tok = self.layout[0].n_tokens
        noisy, clean = [], []
        for i, b in enumerate(self.layout):
            part = self.data[:, i * tok : (i + 1) * tok, :]
            (noisy if b.kind == NOISY else clean).append(part)
        return noisy, clean


def build_interleaved(rollout: RolloutRecord, u: float) -> InterleavedSequence:
    """Pack a rollout's stored states at level u with its clean endpoints."""
    grid = rollout.grid
    if u not in grid.tau[:-1]:
        raise LevelError(f"u={u} is not a non-final grid level of {grid.tau}")
    k = grid.tau.index(u)
    t_chunks = rollout.n_chunks
    tok = rollout.endpoints[0].shape[1]
    layout: List[Block] = []
    parts: List[torch.Tensor] = []
    for t in range(t_chunks):
        layout.append(Block(t, NOISY, tok, u))
        parts.append(rollout.state_at(t, k))
        if t + 1 < t_chunks:
            layout.append(Block(t, CLEAN, tok, 0.0))
            parts.append(rollout.endpoints[t])
    mask = build_mask("interleaved", layout)
    return InterleavedSequence(layout, torch.cat(parts, dim=1), u, mask, rollout)


# ---------------------------------------------------------------------------
# chunk weighting


def participation_scores(m: Sequence[float]) -> torch.Tensor:
    """p_j = sum_{k>=j} m_k / sum_k m_k."""
    mt = torch.as_tensor(list(m), dtype=DTYPE)
    if mt.numel() == 0 or bool((mt <= 0).any()):
        raise DomainError(f"element counts must be positive, got {list(m)}")
    total = mt.sum()
    return mt.flip(0).cumsum(0).flip(0) / total


def _shift_pi(alpha: float, p: torch.Tensor) -> torch.Tensor:
    return alpha * p / (1.0 + (alpha - 1.0) * p)


@lru_cache(maxsize=128)
def _mc_masses(family: str, params: Tuple[float, ...], bounds: Tuple[float, ...]) -> Tuple[float, ...]:
    """Histogram 10^6 transformed uniform draws into participation intervals.

    bounds are the increasing interval edges (0 = p_{J+1}, ..., p_1 = 1);
    chunk j's mass is the fraction of draws landing in [p_{j+1}, p_j].
    Deterministic: the stream seed is a fixed constant.
    """
    stream = RngStream(_MC_SEED, 0)
    u = stream.uniform(_MC_DRAWS)
    if family == "mode":
        (s,) = params
        t = 1.0 - u - s * (torch.cos(math.pi / 2.0 * u) ** 2 - 1.0 + u)
    elif family == "logit_normal":
        mu, sigma = params
        t = torch.sigmoid(mu + sigma * stream.randn(_MC_DRAWS))
    elif family == "shift_density":
        (alpha,) = params
        if alpha > 0:
            t = _shift_pi(alpha, u)
        elif alpha < 0:
            t = 1.0 - _shift_pi(-alpha, 1.0 - u)
        else:
            t = u
    else:
        raise WeightingError(f"no Monte Carlo transform for family {family!r}")
    t = t.clamp(0.0, 1.0)
    edges = torch.as_tensor(bounds, dtype=DTYPE)
    idx = torch.bucketize(t, edges[1:-1], right=False)  # 0..J-1, low interval first
    counts = torch.bincount(idx, minlength=len(bounds) - 1).to(DTYPE)
    return tuple((counts / _MC_DRAWS).tolist())


def raw_weights(g: WeightingFunction, p: torch.Tensor, m: Sequence[float]) -> torch.Tensor:
    """Nonnegative raw weights w~ = g(p) per the family's rule."""
    p = torch.as_tensor(p, dtype=DTYPE)
    if g.family == "shift" and g.shift_reading == "value":
        if g.alpha == 0.0:
            return torch.ones_like(p)
        if g.alpha > 0:
            return _shift_pi(g.alpha, p)
        return _shift_pi(-g.alpha, p[-1] / p)
    # Monte Carlo families: mass over [p_{j+1}, p_j], intervals listed low-first.
    if g.family == "mode":
        family, params = "mode", (g.s,)
    elif g.family == "logit_normal":
        family, params = "logit_normal", (g.mu, g.sigma)
    else:
        family, params = "shift_density", (g.alpha,)
    bounds = (0.0,) + tuple(float(x) for x in reversed(p.tolist()))
    masses = _mc_masses(family, params, bounds)
    w = torch.as_tensor(tuple(reversed(masses)), dtype=DTYPE)  # back to chunk order
    if bool((w == 0).all()):
        raise WeightingError(f"{g.family} weighting put zero mass on every chunk")
    return w


def normalize_weights(w_raw: torch.Tensor, m: Sequence[float]) -> torch.Tensor:
    """w_j = w~_j * sum(m) / sum(w~_k m_k); average element weight becomes 1."""
    w_raw = torch.as_tensor(w_raw, dtype=DTYPE)
    mt = torch.as_tensor(list(m), dtype=DTYPE)
    if w_raw.shape != mt.shape:
        raise ShapeError(f"weights {tuple(w_raw.shape)} vs counts {tuple(mt.shape)}")
    if bool((w_raw < 0).any()):
        raise WeightingError("raw weights must be nonnegative")
    denom = (w_raw * mt).sum()
    if float(denom) <= 0.0:
        raise WeightingError("all raw weights are zero")
    return w_raw * (mt.sum() / denom)


def chunk_weights(g: WeightingFunction, m: Sequence[float]) -> torch.Tensor:
    """participation -> raw -> normalized weights, the full pipeline."""
    p = participation_scores(m)
    return normalize_weights(raw_weights(g, p, m), m)


def aggregate_chunk_loss(losses: torch.Tensor, w: torch.Tensor, m: Sequence[float]) -> torch.Tensor:
    """sum(w_j * loss_j) / sum(w_j * m_j); plain element mean under uniform w."""
    w = torch.as_tensor(w, dtype=DTYPE)
    mt = torch.as_tensor(list(m), dtype=DTYPE)
    if losses.shape != w.shape or w.shape != mt.shape:
        raise ShapeError(
            f"losses {tuple(losses.shape)}, weights {tuple(w.shape)}, counts {tuple(mt.shape)} must agree"
        )
    denom = (w * mt).sum()
    if float(denom) == 0.0:
        raise WeightingError("weighted element count is zero")
    return (w * losses).sum() / denom
