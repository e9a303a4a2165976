"""The tiny chunked denoiser.

One architecture serves three roles — causal student, bidirectional critic,
frozen bidirectional teacher — differing only in the masks their call sites
build. The network is a pre-norm residual attention stack over packed chunk
tokens. Every token receives the sum of: an input projection of its features,
an embedding of its own noise level, a projection of the sequence condition,
a sinusoidal chunk-position code, and a learned within-chunk position
embedding. The output head reads the final hidden state as the predicted
clean endpoint of the token (endpoint parameterization) and is zero-
initialized, so a fresh model predicts endpoint 0 everywhere.

Chunk positions are encoded sinusoidally (not learned) so a model trained on
T chunks can be rolled out past T. The noisy and clean copies of chunk t
share position t; the attention mask is what tells them apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
from torch import nn

from .errors import ShapeError
from .layout import Block, token_meta
from .numerics import DTYPE, RngStream

KV = Tuple[torch.Tensor, torch.Tensor]  # per-layer keys/values [B, H, L, hd]


@dataclass(frozen=True)
class ModelConfig:
    dim: int
    cond_dim: int
    tokens_per_chunk: int
    width: int = 64
    n_blocks: int = 2
    n_heads: int = 4
    level_features: int = 8
    role: str = "student"  # student | critic | teacher (mask policy lives at call sites)

    def __post_init__(self):
        if self.width % self.n_heads != 0:
            raise ShapeError(f"width {self.width} not divisible by heads {self.n_heads}")


def level_features(levels: torch.Tensor, n_feats: int) -> torch.Tensor:
    """Fourier features of per-token noise levels in [0, 1].

    levels may be [L] (shared across the batch) or [B, L] (per sample);
    the output appends a trailing 2*n_feats feature axis.
    """
    freqs = 2.0 ** torch.arange(n_feats, dtype=DTYPE)
    ang = 2.0 * math.pi * levels.to(DTYPE)[..., None] * freqs
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


def chunk_position_code(chunk_ids: torch.Tensor, width: int) -> torch.Tensor:
    """Classic sinusoidal position code [L, width] over chunk indices."""
    half = width // 2
    inv = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=DTYPE) / half)
    ang = chunk_ids.to(DTYPE)[:, None] * inv[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


class _AttnBlock(nn.Module):
    def __init__(self, width: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = width // n_heads
        self.ln1 = nn.LayerNorm(width)
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        self.ln2 = nn.LayerNorm(width)
        self.fc1 = nn.Linear(width, 4 * width)
        self.fc2 = nn.Linear(4 * width, width)

    def _heads(self, t: torch.Tensor) -> torch.Tensor:
        b, l, _ = t.shape
        return t.reshape(b, l, self.n_heads, self.head_dim).transpose(1, 2)

    def forward(
        self, x: torch.Tensor, mask: torch.Tensor, cache: Optional[KV]
    ) -> Tuple[torch.Tensor, KV]:
        h = self.ln1(x)
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        q, k, v = self._heads(q), self._heads(k), self._heads(v)  # [B, H, L, hd]
        new_kv = (k, v)
        if cache is not None:
            k = torch.cat([cache[0], k], dim=2)
            v = torch.cat([cache[1], v], dim=2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)  # [B, H, L, Lctx+L]
        scores = scores.masked_fill(~mask[None, None, :, :], float("-inf"))
        att = torch.softmax(scores, dim=-1)
        x = x + self.proj((att @ v).transpose(1, 2).reshape(x.shape[0], x.shape[1], -1))
        x = x + self.fc2(torch.nn.functional.gelu(self.fc1(self.ln2(x))))
        return x, new_kv


class DenoiserModel(nn.Module):
    def __init__(self, cfg: ModelConfig, init_stream: Optional[RngStream] = None):
        super().__init__()
        self.cfg = cfg
        w = cfg.width
        self.in_proj = nn.Linear(cfg.dim, w)
        self.level_proj = nn.Linear(2 * cfg.level_features, w)
        self.cond_proj = nn.Linear(cfg.cond_dim, w)
        self.tok_pos = nn.Embedding(cfg.tokens_per_chunk, w)
        self.blocks = nn.ModuleList(_AttnBlock(w, cfg.n_heads) for _ in range(cfg.n_blocks))
        self.out_ln = nn.LayerNorm(w)
        self.head = nn.Linear(w, cfg.dim)
        self.to(DTYPE)
        self.init_parameters(init_stream if init_stream is not None else RngStream(0, 0))

    def init_parameters(self, stream: RngStream, scale: float = 0.02) -> None:
        """Deterministic init from a stream; output head zeroed."""
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.startswith("head."):
                    p.zero_()
                elif name.endswith("bias") or "ln" in name.split(".")[-2]:
                    # LayerNorm weights are ones, every bias zero.
                    p.copy_(torch.ones_like(p) if name.endswith("weight") else torch.zeros_like(p))
                else:
                    p.copy_(scale * stream.randn(*p.shape))

    # -- core packed forward ------------------------------------------------

    def forward_packed(
        self,
        tokens: torch.Tensor,  # [B, L, dim]
        levels: torch.Tensor,  # [L] or [B, L]
        chunk_ids: torch.Tensor,  # [L]
        tok_ids: torch.Tensor,  # [L]
        cond: torch.Tensor,  # [B, cond_dim]
        mask: torch.Tensor,  # [L, Lctx + L] bool
        cache: Optional[Sequence[KV]] = None,
    ) -> Tuple[torch.Tensor, List[KV]]:
        """Predict per-token endpoints; also return this pass's K/V records."""
        if tokens.dim() != 3 or tokens.shape[-1] != self.cfg.dim:
            raise ShapeError(f"tokens must be [B, L, {self.cfg.dim}], got {tuple(tokens.shape)}")
        b, l, _ = tokens.shape
        n_ctx = 0 if cache is None else cache[0][0].shape[2]
        if mask.shape != (l, n_ctx + l):
            raise ShapeError(f"mask must be [{l}, {n_ctx + l}], got {tuple(mask.shape)}")
        lvl = self.level_proj(level_features(levels, self.cfg.level_features))
        x = (
            self.in_proj(tokens)
            + (lvl if lvl.dim() == 3 else lvl[None, :, :])
            + self.cond_proj(cond)[:, None, :]
            + chunk_position_code(chunk_ids, self.cfg.width)[None, :, :]
            + self.tok_pos(tok_ids)[None, :, :]
        )
        records: List[KV] = []
        for i, blk in enumerate(self.blocks):
            x, kv = blk(x, mask, None if cache is None else cache[i])
            records.append(kv)
        return self.head(self.out_ln(x)), records

    def forward_layout(
        self,
        layout: Sequence[Block],
        tokens: torch.Tensor,  # [B, L, dim] packed in layout order
        cond: torch.Tensor,
        mask: torch.Tensor,
        cache: Optional[Sequence[KV]] = None,
    ) -> Tuple[torch.Tensor, List[KV]]:
        levels, chunk_ids, tok_ids = token_meta(layout)
        return self.forward_packed(tokens, levels, chunk_ids, tok_ids, cond, mask, cache)

    def endpoint_full(
        self, z: torch.Tensor, levels: torch.Tensor, cond: torch.Tensor
    ) -> torch.Tensor:
        """Bidirectional endpoint prediction for a full sequence.

        z: [B, T, tok, dim]; levels: per-chunk noise levels, [T] shared or
        [B, T] per sample; returns z's shape. Teacher/critic calling convention.
        """
        b, t, tok, dim = z.shape
        lv = levels.to(DTYPE).repeat_interleave(tok, dim=-1)
        chunk_ids = torch.arange(t).repeat_interleave(tok)
        tok_ids = torch.arange(tok).repeat(t)
        mask = torch.ones(t * tok, t * tok, dtype=torch.bool)
        out, _ = self.forward_packed(z.reshape(b, t * tok, dim), lv, chunk_ids, tok_ids, cond, mask)
        return out.reshape(b, t, tok, dim)


def clone_model(model: DenoiserModel, role: Optional[str] = None) -> DenoiserModel:
    """Fresh model with copied weights; optionally re-tagged for a new role."""
    cfg = model.cfg if role is None else replace_role(model.cfg, role)
    out = DenoiserModel(cfg)
    out.load_state_dict(model.state_dict())
    return out


def replace_role(cfg: ModelConfig, role: str) -> ModelConfig:
    from dataclasses import replace

    return replace(cfg, role=role)
