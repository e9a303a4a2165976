"""Noise-schedule coefficients, forward perturbation, and the few-step
timestep grid used by the consistency-style sampler.

Noise level n runs from 0 (clean) to 1 (pure noise). The default family is
the linear interpolation alpha = 1 - n, sigma = n; a trigonometric
variance-preserving family is included to keep the interface honest about
being pluggable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import torch

from .errors import ConfigError, DomainError
from .numerics import DTYPE, RngStream, gaussian_sample


def _check_level(n: float) -> float:
    n = float(n)
    if not (0.0 <= n <= 1.0) or n != n:
        raise DomainError(f"noise level must lie in [0, 1], got {n}")
    return n


@dataclass(frozen=True)
class NoiseSchedule:
    """alpha(n), sigma(n) for a named family.

    Invariants: alpha(0)=1, sigma(0)=0, alpha(1)=0, sigma(1)=1; alpha
    non-increasing and sigma non-decreasing over [0, 1].
    """

    family: str = "linear"

    def alpha_sigma(self, n: float) -> Tuple[float, float]:
        n = _check_level(n)
        if self.family == "linear":
            return 1.0 - n, n
        if self.family == "trig":
            return math.cos(0.5 * math.pi * n), math.sin(0.5 * math.pi * n)
        raise ConfigError(f"unknown schedule family {self.family!r}")


def alpha_sigma(sched: NoiseSchedule, n: float) -> Tuple[float, float]:
    return sched.alpha_sigma(n)


def alpha_sigma_map(sched: NoiseSchedule, n: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Elementwise (alpha, sigma) for a tensor of levels in [0, 1]."""
    n = n.to(DTYPE)
    if not bool(((n >= 0.0) & (n <= 1.0)).all()):
        raise DomainError("noise levels must lie in [0, 1]")
    if sched.family == "linear":
        return 1.0 - n, n
    if sched.family == "trig":
        return torch.cos(0.5 * math.pi * n), torch.sin(0.5 * math.pi * n)
    raise ConfigError(f"unknown schedule family {sched.family!r}")


def forward_perturb(x: torch.Tensor, n: float, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """z = alpha(n) * x + sigma(n) * eps, the forward noising formula."""
    a, s = sched.alpha_sigma(n)
    return a * x + s * eps


def perturb(
    x: torch.Tensor, n: float, stream: RngStream, sched: NoiseSchedule
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Draw eps ~ N(0, I) and return (z, eps); eps is returned for test reuse."""
    eps = gaussian_sample(stream, x.shape)
    return forward_perturb(x, n, eps, sched), eps


@dataclass(frozen=True)
class TimestepGrid:
    """Strictly decreasing levels tau_1 > ... > tau_K = 0 of the sampler."""

    tau: Tuple[float, ...]

    def __post_init__(self):
        if len(self.tau) < 2:
            raise ConfigError(f"grid needs at least 2 levels, got {len(self.tau)}")
        for a, b in zip(self.tau, self.tau[1:]):
            if not b < a:
                raise ConfigError(f"grid must be strictly decreasing, got {self.tau}")
        if self.tau[-1] != 0.0:
            raise ConfigError(f"grid must end at exactly 0, got {self.tau}")
        _check_level(self.tau[0])

    @property
    def K(self) -> int:
        return len(self.tau)

    def as_tensor(self) -> torch.Tensor:
        return torch.tensor(self.tau, dtype=DTYPE)


def default_grid(K: int) -> TimestepGrid:
    """Uniform grid tau_k = (K - k) / (K - 1); K = 4 gives (1, 2/3, 1/3, 0)."""
    if K < 2:
        raise ConfigError(f"grid size must be >= 2, got {K}")
    return TimestepGrid(tuple((K - k) / (K - 1) for k in range(1, K + 1)))
