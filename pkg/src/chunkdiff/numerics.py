"""Float64 tensor utilities: seeded Gaussian streams, a finite-difference
gradient oracle, and stop-gradient semantics.

All tensors in this package are torch float64 on CPU. Reverse-mode gradients
come from torch autograd; the independent check for every hand-derived or
autograd gradient in the repo is `finite_diff_grad`, which never touches
autograd.
"""

from __future__ import annotations

from typing import Callable, Sequence

import torch

from .errors import DomainError, OracleError, ShapeError

DTYPE = torch.float64

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    """One splitmix64 step; the standard 64-bit avalanche mixer."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _mix(seed: int, stream_id: int) -> int:
    a = _splitmix64(seed & _MASK64)
    b = _splitmix64((stream_id & _MASK64) ^ 0xA5A5A5A5A5A5A5A5)
    return _splitmix64((a ^ (b * 0xD1B54A32D192ED03)) & _MASK64)


class RngStream:
    """A named, order-independent random stream.

    Two streams with the same (seed, stream_id) produce the same draw sequence
    regardless of when they are created or what other streams have drawn.
    `child(i)` derives an independent substream, so per-rollout / per-chunk
    streams can be handed out before any draws happen.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._gen = torch.Generator(device="cpu")
        self._gen.manual_seed(_mix(self.seed, self.stream_id))

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, _splitmix64((self.stream_id * 0x9E3779B97F4A7C15 + index + 1) & _MASK64))

    def randn(self, *shape: int) -> torch.Tensor:
        _check_extents(shape)
        return torch.randn(*shape, generator=self._gen, dtype=DTYPE)

    def uniform(self, *shape: int) -> torch.Tensor:
        """U(0,1) draws; scalar tensor when called without a shape."""
        if not shape:
            return torch.rand((), generator=self._gen, dtype=DTYPE)
        _check_extents(shape)
        return torch.rand(*shape, generator=self._gen, dtype=DTYPE)

    def randint(self, low: int, high: int) -> int:
        """One integer uniform over {low, ..., high - 1}."""
        if high <= low:
            raise DomainError(f"empty integer range [{low}, {high})")
        return int(torch.randint(low, high, (1,), generator=self._gen).item())

    def randints(self, low: int, high: int, n: int) -> torch.Tensor:
        """n integers uniform over {low, ..., high - 1}, as a long tensor."""
        if high <= low:
            raise DomainError(f"empty integer range [{low}, {high})")
        if n <= 0:
            raise ShapeError(f"draw count must be positive, got {n}")
        return torch.randint(low, high, (n,), generator=self._gen)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def _check_extents(shape: Sequence[int]) -> None:
    if len(shape) == 0:
        raise ShapeError("shape must have at least one extent")
    for s in shape:
        if int(s) <= 0:
            raise ShapeError(f"extents must be positive, got {tuple(shape)}")


def gaussian_sample(stream: RngStream, shape: Sequence[int]) -> torch.Tensor:
    """I.i.d. standard-normal tensor; deterministic given (seed, stream_id, call index)."""
    return stream.randn(*[int(s) for s in shape])


def as_tensor(data, checked: bool = True) -> torch.Tensor:
    """Build a float64 tensor from nested lists / arrays; rejects NaN/Inf when checked."""
    t = torch.as_tensor(data, dtype=DTYPE)
    if checked and not bool(torch.isfinite(t).all()):
        raise DomainError("tensor contains non-finite entries")
    return t


def stop_gradient(v: torch.Tensor) -> torch.Tensor:
    """Identical value; zero gradient flow through the result."""
    return v.detach()


def finite_diff_grad(
    f: Callable[[torch.Tensor], torch.Tensor | float],
    x: torch.Tensor,
    h: float = 1e-5,
) -> torch.Tensor:
    """Central-difference gradient of a scalar-valued f at x.

    Independent of autograd on purpose: this is the oracle the analytic
    gradients are tested against. f must be evaluable at x +- h*e_i and
    must not mutate its argument.
    """
    if h <= 0:
        raise DomainError(f"step size must be positive, got {h}")
    x = x.detach().to(DTYPE)
    flat = x.reshape(-1)
    grad = torch.empty_like(flat)
    for i in range(flat.numel()):
        xp = flat.clone()
        xm = flat.clone()
        xp[i] += h
        xm[i] -= h
        fp = float(f(xp.reshape(x.shape)))
        fm = float(f(xm.reshape(x.shape)))
        if not (torch.isfinite(torch.tensor(fp)) and torch.isfinite(torch.tensor(fm))):
            raise OracleError(f"non-finite evaluation at coordinate {i}: f+={fp}, f-={fm}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def rel_error(a: torch.Tensor, b: torch.Tensor) -> float:
    """Max-norm relative disagreement used by the gradient tests."""
    a = torch.as_tensor(a, dtype=DTYPE)
    b = torch.as_tensor(b, dtype=DTYPE)
    denom = max(float(b.abs().max()), 1e-300)
    return float((a - b).abs().max()) / denom
