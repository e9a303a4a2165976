"""Packed-sequence layouts and the paradigm attention masks.

A packed sequence is a list of blocks, each block being the tokens of one
chunk in one corruption state: kind "clean" (a clean history chunk) or
"noisy" (a noised chunk awaiting an endpoint prediction). The four history
paradigms differ in which blocks may attend to which:

  teacher_forcing / self_forcing
      noisy block of chunk t sees clean blocks of chunks < t, plus itself;
      clean block of chunk t sees clean blocks of chunks < t, plus itself.
      (The two paradigms share the visibility rule; they differ in where the
      clean blocks COME from — ground truth vs. the model's own rollout — and
      in whether history is served in-pass or from a detached cache.)
  interleaved
      same visibility rule, applied to the alternating layout
      (noisy_1, clean_1, noisy_2, clean_2, ..., noisy_T) in which the clean
      blocks stay inside the supervised computation graph. Clean blocks never
      see noisy blocks, so their hidden records are identical to the ones an
      incremental inference cache produces.
  diffusion_forcing
      every block is noisy (one independent level per chunk) and block t sees
      blocks of chunks <= t.

Within a block attention is always bidirectional; across blocks it is causal
in chunk index. True = may attend.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import torch

from .errors import LayoutError

CLEAN = "clean"
NOISY = "noisy"

# Paradigms that use the clean-history visibility rule.
_CLEAN_HISTORY_PARADIGMS = ("teacher_forcing", "self_forcing", "interleaved")
PARADIGMS = _CLEAN_HISTORY_PARADIGMS + ("diffusion_forcing",)


@dataclass(frozen=True)
class Block:
    """One chunk's tokens in one corruption state within a packed sequence."""

    chunk_index: int
    kind: str  # CLEAN or NOISY
    n_tokens: int
    level: float  # noise level of the block's tokens (0 for clean blocks)

    def __post_init__(self):
        if self.kind not in (CLEAN, NOISY):
            raise LayoutError(f"unknown block kind {self.kind!r}")
        if self.n_tokens <= 0:
            raise LayoutError(f"block needs at least one token, got {self.n_tokens}")
        if self.kind == CLEAN and self.level != 0.0:
            raise LayoutError(f"clean block carries level {self.level}, expected 0")


def validate_layout(layout: Sequence[Block]) -> None:
    if len(layout) == 0:
        raise LayoutError("empty layout")
    prev = None
    seen = set()
    for b in layout:
        if prev is not None and b.chunk_index < prev:
            raise LayoutError(f"chunk indices must be non-decreasing, got {[x.chunk_index for x in layout]}")
        key = (b.chunk_index, b.kind)
        if key in seen:
            raise LayoutError(f"duplicate block for chunk {b.chunk_index} kind {b.kind}")
        seen.add(key)
        prev = b.chunk_index


def layout_token_count(layout: Sequence[Block]) -> int:
    return sum(b.n_tokens for b in layout)


def _block_visible(paradigm: str, query: Block, key: Block) -> bool:
    if query is key:
        return True
    if paradigm == "diffusion_forcing":
        return key.chunk_index <= query.chunk_index
    # clean-history rule: only clean blocks of strictly earlier chunks.
    return key.kind == CLEAN and key.chunk_index < query.chunk_index


def build_mask(paradigm: str, layout: Sequence[Block]) -> torch.Tensor:
    """Boolean [L, L] attention mask over the packed tokens of `layout`."""
    if paradigm not in PARADIGMS:
        raise LayoutError(f"unknown paradigm {paradigm!r}; expected one of {PARADIGMS}")
    validate_layout(layout)
    if paradigm == "diffusion_forcing":
        for b in layout:
            if b.kind != NOISY:
                raise LayoutError("diffusion_forcing layouts contain only noisy blocks")
    n = len(layout)
    block_mask = torch.zeros(n, n, dtype=torch.bool)
    for i, q in enumerate(layout):
        for j, k in enumerate(layout):
            block_mask[i, j] = _block_visible(paradigm, q, k) or i == j
    counts = torch.tensor([b.n_tokens for b in layout])
    return block_mask.repeat_interleave(counts, dim=0).repeat_interleave(counts, dim=1)


def full_mask(n_tokens: int, n_context: int = 0) -> torch.Tensor:
    """All-true mask: rows = n_tokens new tokens, cols = context then new."""
    return torch.ones(n_tokens, n_context + n_tokens, dtype=torch.bool)


def token_meta(layout: Sequence[Block]) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Per-token (level, chunk_index, token_in_chunk) for a packed layout."""
    levels, chunks, toks = [], [], []
    for b in layout:
        levels.extend([b.level] * b.n_tokens)
        chunks.extend([b.chunk_index] * b.n_tokens)
        toks.extend(range(b.n_tokens))
    return (
        torch.tensor(levels, dtype=torch.float64),
        torch.tensor(chunks, dtype=torch.long),
        torch.tensor(toks, dtype=torch.long),
    )
