"""Synthetic data: a Gaussian blob bouncing around a small pixel grid.

A condition is (vx, vy, radius, intensity). The blob starts at the grid
center and moves by its velocity once per frame, reflecting off the
boundaries; each frame renders the blob as an isotropic Gaussian bump with
peak `intensity`, so pixels stay in [0, 1]. Frames are grouped into chunks
of `frames_per_chunk` and flattened per frame, giving sequences shaped like
the [T, tok, dim] chunk tensors the rest of the package consumes. The
trajectory is a pure function of the condition, so it doubles as the
ground-truth reference for evaluation and rewards, and extends to any
horizon for long-rollout tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import torch

from .container import read_container, write_container
from .errors import CheckpointError, ConfigError, DomainError, ShapeError
from .numerics import DTYPE, RngStream

CONDITION_FIELDS = ("vx", "vy", "radius", "intensity")


@dataclass(frozen=True)
class BlobWorld:
    grid_size: int = 8
    frames_per_chunk: int = 3
    n_chunks: int = 4
    vel_max: float = 1.25
    radius_range: Tuple[float, float] = (0.7, 1.8)
    intensity_range: Tuple[float, float] = (0.4, 1.0)

    def __post_init__(self):
        if self.grid_size < 2 or self.frames_per_chunk < 1 or self.n_chunks < 1:
            raise ConfigError(
                f"degenerate world: grid={self.grid_size}, frames/chunk={self.frames_per_chunk}, "
                f"chunks={self.n_chunks}"
            )
        if self.radius_range[0] <= 0 or self.radius_range[1] < self.radius_range[0]:
            raise ConfigError(f"bad radius range {self.radius_range}")

    @property
    def cond_dim(self) -> int:
        return len(CONDITION_FIELDS)

    @property
    def dim(self) -> int:
        return self.grid_size * self.grid_size

    def sample_conditions(self, stream: RngStream, n: int) -> torch.Tensor:
        """[n, 4] conditions: velocities, radius, intensity in their ranges."""
        u = stream.uniform(n, 4)
        out = torch.empty(n, 4, dtype=DTYPE)
        out[:, 0] = (2.0 * u[:, 0] - 1.0) * self.vel_max
        out[:, 1] = (2.0 * u[:, 1] - 1.0) * self.vel_max
        out[:, 2] = self.radius_range[0] + u[:, 2] * (self.radius_range[1] - self.radius_range[0])
        out[:, 3] = self.intensity_range[0] + u[:, 3] * (
            self.intensity_range[1] - self.intensity_range[0]
        )
        return out

    def positions(self, cond: torch.Tensor, n_frames: int) -> torch.Tensor:
        """[n_frames, 2] blob centers (x, y), reflecting off [0, grid-1]."""
        if cond.shape != (4,):
            raise ShapeError(f"condition must be [4], got {tuple(cond.shape)}")
        hi = float(self.grid_size - 1)
        start = hi / 2.0
        vx, vy = float(cond[0]), float(cond[1])
        pts = torch.empty(n_frames, 2, dtype=DTYPE)
        for f in range(n_frames):
            pts[f, 0] = _reflect(start + f * vx, hi)
            pts[f, 1] = _reflect(start + f * vy, hi)
        return pts

    def render(self, positions: torch.Tensor, radius: float, intensity: float) -> torch.Tensor:
        """[F, grid, grid] Gaussian-bump frames at the given centers."""
        g = self.grid_size
        ii = torch.arange(g, dtype=DTYPE)[:, None]  # rows = y
        jj = torch.arange(g, dtype=DTYPE)[None, :]  # cols = x
        frames = []
        for f in range(positions.shape[0]):
            px, py = positions[f, 0], positions[f, 1]
            d2 = (ii - py) ** 2 + (jj - px) ** 2
            frames.append(intensity * torch.exp(-d2 / (2.0 * radius * radius)))
        return torch.stack(frames)

    def trajectory(self, cond: torch.Tensor, n_chunks: int | None = None) -> torch.Tensor:
        """Ground-truth chunk sequence [n_chunks, frames_per_chunk, dim]."""
        t = self.n_chunks if n_chunks is None else int(n_chunks)
        if t < 1:
            raise DomainError(f"need at least one chunk, got {t}")
        n_frames = t * self.frames_per_chunk
        frames = self.render(
            self.positions(cond, n_frames), float(cond[2]), float(cond[3])
        )
        return frames.reshape(t, self.frames_per_chunk, self.dim)

    def trajectories(self, conds: torch.Tensor, n_chunks: int | None = None) -> torch.Tensor:
        return torch.stack([self.trajectory(conds[i], n_chunks) for i in range(conds.shape[0])])


def _reflect(p: float, hi: float) -> float:
    """Fold p into [0, hi] like a ray bouncing between two mirrors."""
    period = 2.0 * hi
    m = p % period
    return period - m if m > hi else m


# ---------------------------------------------------------------------------
# dataset files

DATASET_KIND = "blob-dataset"


def gen_dataset(world: BlobWorld, count: int, seed: int, path: str) -> None:
    """Write `count` (condition, chunk sequence) pairs; bitwise reproducible."""
    if count < 1:
        raise DomainError(f"count must be >= 1, got {count}")
    conds = world.sample_conditions(RngStream(seed, 0xDA7A), count)
    data = world.trajectories(conds)
    meta = {
        "count": count,
        "seed": seed,
        "world": {
            "grid_size": world.grid_size,
            "frames_per_chunk": world.frames_per_chunk,
            "n_chunks": world.n_chunks,
            "vel_max": world.vel_max,
            "radius_range": list(world.radius_range),
            "intensity_range": list(world.intensity_range),
        },
    }
    write_container(path, DATASET_KIND, meta, {"conds": conds, "data": data})


class BlobDataset:
    """A loaded dataset file: conditions, chunk sequences, and their world."""

    def __init__(self, path: str):
        kind, meta, tensors = read_container(path)
        if kind != DATASET_KIND:
            raise CheckpointError(f"{path} holds {kind!r}, not a dataset")
        w = meta["world"]
        self.world = BlobWorld(
            grid_size=int(w["grid_size"]),
            frames_per_chunk=int(w["frames_per_chunk"]),
            n_chunks=int(w["n_chunks"]),
            vel_max=float(w["vel_max"]),
            radius_range=tuple(w["radius_range"]),
            intensity_range=tuple(w["intensity_range"]),
        )
        self.conds = tensors["conds"]
        self.data = tensors["data"]
        if self.conds.shape[0] != self.data.shape[0]:
            raise CheckpointError(
                f"dataset rows disagree: {self.conds.shape[0]} conds vs {self.data.shape[0]} sequences"
            )

    def __len__(self) -> int:
        return self.conds.shape[0]

    def sample_batch(self, stream: RngStream, batch_size: int) -> Tuple[torch.Tensor, torch.Tensor]:
        """(chunks [B, T, tok, dim], conditions [B, 4]) drawn with replacement."""
        idx = stream.randints(0, len(self), batch_size)
        return self.data[idx], self.conds[idx]
