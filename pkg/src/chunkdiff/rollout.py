"""History cache and the few-step autoregressive rollout loop.

A rollout generates chunk t by initializing z at the top of the timestep grid
from pure noise, alternating endpoint predictions with stochastic consistency
transitions down the grid, and finally appending the clean endpoint to the
history cache so chunk t+1 can attend to it. Everything here runs without
gradient retention; training passes rebuild what they need from the stored
states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import torch

from .errors import ConfigError, LayoutError
from .kernels import em_denoise_mean
from .layout import CLEAN, NOISY, Block, build_mask, full_mask
from .network import KV, DenoiserModel
from .numerics import DTYPE, RngStream
from .schedule import NoiseSchedule, TimestepGrid

TRANSITIONS = ("consistency", "em")


def stacked_randn(streams: Sequence[RngStream], shape: Sequence[int]) -> torch.Tensor:
    """One draw per stream, stacked on a leading batch axis."""
    return torch.stack([s.randn(*shape) for s in streams])


@dataclass
class HistoryCache:
    """Per-chunk, per-layer key/value records for chunks generated so far."""

    detached: bool = True
    chunk_ids: List[int] = field(default_factory=list)
    records: List[List[KV]] = field(default_factory=list)  # [chunk][layer] -> (k, v)

    def __len__(self) -> int:
        return len(self.chunk_ids)

    @property
    def n_tokens(self) -> int:
        return sum(kv[0][0].shape[2] for kv in self.records) if self.records else 0

    def append(self, chunk_id: int, layer_kv: List[KV]) -> None:
        if self.chunk_ids and chunk_id <= self.chunk_ids[-1]:
            raise LayoutError(f"cache append out of order: {chunk_id} after {self.chunk_ids}")
        if self.detached:
            layer_kv = [(k.detach(), v.detach()) for k, v in layer_kv]
        self.chunk_ids.append(chunk_id)
        self.records.append(layer_kv)

    def packed(self, upto: Optional[int] = None) -> Optional[List[KV]]:
        """Per-layer (K, V) concatenated over cached chunks with id < upto."""
        recs = self.records if upto is None else [
            kv for cid, kv in zip(self.chunk_ids, self.records) if cid < upto
        ]
        if not recs:
            return None
        n_layers = len(recs[0])
        return [
            (
                torch.cat([r[i][0] for r in recs], dim=2),
                torch.cat([r[i][1] for r in recs], dim=2),
            )
            for i in range(n_layers)
        ]


@dataclass
class RolloutRecord:
    """Everything a rollout produced: per-chunk noisy states at every grid
    level, clean endpoints, and the history cache."""

    grid: TimestepGrid
    cond: torch.Tensor  # [B, cond_dim]
    states: List[torch.Tensor]  # per chunk: [K, B, tok, dim], row k = state at tau_k
    endpoints: List[torch.Tensor]  # per chunk: [B, tok, dim]
    cache: HistoryCache

    @property
    def n_chunks(self) -> int:
        return len(self.endpoints)

    def state_at(self, t: int, k: int) -> torch.Tensor:
        """Stored noisy state of chunk t at grid index k (0-based)."""
        return self.states[t][k]

    def endpoints_tensor(self) -> torch.Tensor:
        return torch.stack(self.endpoints, dim=1)  # [B, T, tok, dim]


def _denoise_forward(
    model: DenoiserModel,
    z: torch.Tensor,  # [B, tok, dim]
    level: float,
    chunk_id: int,
    cond: torch.Tensor,
    cache: HistoryCache,
) -> torch.Tensor:
    """Endpoint prediction for one noisy chunk attending to cache + itself."""
    block = Block(chunk_id, NOISY, z.shape[1], level)
    packed = cache.packed(upto=chunk_id)
    n_ctx = 0 if packed is None else packed[0][0].shape[2]
    mask = full_mask(z.shape[1], n_ctx)
    out, _ = model.forward_layout([block], z, cond, mask, packed)
    return out


def _append_clean(
    model: DenoiserModel,
    endpoint: torch.Tensor,  # [B, tok, dim]
    chunk_id: int,
    cond: torch.Tensor,
    cache: HistoryCache,
) -> None:
    block = Block(chunk_id, CLEAN, endpoint.shape[1], 0.0)
    packed = cache.packed(upto=chunk_id)
    n_ctx = 0 if packed is None else packed[0][0].shape[2]
    mask = full_mask(endpoint.shape[1], n_ctx)
    _, kv = model.forward_layout([block], endpoint, cond, mask, packed)
    cache.append(chunk_id, kv)


def rollout_chunk(
    model: DenoiserModel,
    grid: TimestepGrid,
    cond: torch.Tensor,  # [B, cond_dim]
    cache: HistoryCache,
    streams: Sequence[RngStream],
    chunk_id: int = 0,
    sched: NoiseSchedule = NoiseSchedule("linear"),
    skip_final_endpoint_call: bool = False,
    full_prefix: Optional[Sequence[torch.Tensor]] = None,
    transition: str = "consistency",
    em_sigma: float = 0.4,
) -> tuple[torch.Tensor, torch.Tensor]:
    """K-step generation of one chunk.

    Returns (states [K, B, tok, dim], endpoint [B, tok, dim]). When
    `full_prefix` is given (list of earlier clean endpoints), every forward
    re-encodes the whole clean prefix instead of reading the cache — the
    reference path the cache is tested against. `transition` picks how the
    state moves down the grid: fresh-noise consistency jumps, or stochastic
    reverse-time drift steps ("em") with exploration scale `em_sigma`.
    """
    if grid.K < 2:
        raise ConfigError("rollout needs a grid with at least 2 levels")
    if transition not in TRANSITIONS:
        raise ConfigError(f"unknown transition {transition!r}; pick one of {TRANSITIONS}")
    tok, dim = model.cfg.tokens_per_chunk, model.cfg.dim
    b = cond.shape[0]

    def predict(z: torch.Tensor, level: float) -> torch.Tensor:
        if full_prefix is None:
            return _denoise_forward(model, z, level, chunk_id, cond, cache)
        layout = [Block(i, CLEAN, tok, 0.0) for i in range(chunk_id)]
        layout.append(Block(chunk_id, NOISY, tok, level))
        packed = torch.cat([*(e for e in full_prefix), z], dim=1) if full_prefix else z
        out, _ = model.forward_layout(layout, packed, cond, build_mask("self_forcing", layout))
        return out[:, chunk_id * tok :, :]

    with torch.no_grad():
        z = stacked_randn(streams, (tok, dim))
        states = [z]
        x_hat = None
        for k in range(grid.K - 1):
            x_hat = predict(z, grid.tau[k])
            s = grid.tau[k + 1]
            eps = stacked_randn(streams, (tok, dim))
            if transition == "consistency":
                a, sig = sched.alpha_sigma(s)
                z = a * x_hat + sig * eps
            else:
                mean = em_denoise_mean(z, x_hat, grid.tau[k], s, em_sigma)
                z = mean + em_sigma * math.sqrt(grid.tau[k] - s) * eps
            states.append(z)
        if skip_final_endpoint_call and x_hat is not None and transition == "consistency" and sched.alpha_sigma(grid.tau[-1])[1] == 0.0:
            endpoint = x_hat
        else:
            endpoint = predict(z, grid.tau[-1])
    return torch.stack(states), endpoint


def autoregressive_rollout(
    model: DenoiserModel,
    n_chunks: int,
    grid: TimestepGrid,
    cond: torch.Tensor,  # [B, cond_dim]
    stream: RngStream | Sequence[RngStream],
    detach_history: bool = True,
    sched: NoiseSchedule = NoiseSchedule("linear"),
    skip_final_endpoint_call: bool = False,
    use_cache: bool = True,
    transition: str = "consistency",
    em_sigma: float = 0.4,
    history_override: Optional[torch.Tensor] = None,  # [B, n_chunks, tok, dim]
) -> RolloutRecord:
    """Generate n_chunks chunks, each conditioning on the ones before it.

    Chunk t draws from stream.child(t), so per-chunk randomness is
    order-independent. With use_cache=False each forward re-encodes the full
    clean prefix (slow reference path; same distribution). When
    `history_override` is given, the cache is fed those chunks instead of the
    model's own endpoints — the probe that replaces self-rollout history with
    reference frames while keeping per-chunk noise draws identical.
    """
    if n_chunks < 1:
        raise ConfigError(f"need at least one chunk, got {n_chunks}")
    streams = [stream] if isinstance(stream, RngStream) else list(stream)
    if cond.dim() != 2 or cond.shape[0] != len(streams):
        raise ConfigError(f"cond must be [B, cond_dim] with one stream per row; got {tuple(cond.shape)}")
    if history_override is not None and (
        history_override.dim() != 4 or history_override.shape[:2] != (cond.shape[0], n_chunks)
    ):
        raise ConfigError(
            f"history_override must be [B, {n_chunks}, tok, dim], got {tuple(history_override.shape)}"
        )
    cache = HistoryCache(detached=detach_history)
    states: List[torch.Tensor] = []
    endpoints: List[torch.Tensor] = []
    with torch.no_grad():
        for t in range(n_chunks):
            chunk_streams = [s.child(t) for s in streams]
            if use_cache:
                prefix = None
            elif history_override is not None:
                prefix = [history_override[:, i] for i in range(t)]
            else:
                prefix = list(endpoints)
            st, ep = rollout_chunk(
                model, grid, cond, cache, chunk_streams, chunk_id=t, sched=sched,
                skip_final_endpoint_call=skip_final_endpoint_call,
                full_prefix=prefix, transition=transition, em_sigma=em_sigma,
            )
            states.append(st)
            endpoints.append(ep)
            if use_cache:
                kept = ep if history_override is None else history_override[:, t]
                _append_clean(model, kept, t, cond, cache)
    return RolloutRecord(grid=grid, cond=cond, states=states, endpoints=endpoints, cache=cache)
