"""The two stochastic transition kernels.

Consistency kernel: given a predicted clean endpoint x_hat, the next latent at
level s is Gaussian with mean alpha(s) * x_hat and per-coordinate variance
sigma(s)^2. Its reduced (constant-free) log-probability is the policy quantity
the group-relative update differentiates; the full Gaussian form lives here
only for test oracles.

Euler-Maruyama kernel: the stochastic-flow baseline. Time convention for the
literal ops below: tau is the NOISE LEVEL (tau = 1 pure noise, tau = 0 clean)
of the linear path y = (1 - tau) * x + tau * eps, and v is the velocity of
that path in the direction of increasing tau, so the endpoint adapter is
v = (y - x_hat) / tau. Under this convention the drift

    b = v + (sigma^2 / (2 tau)) * (y + (1 - tau) * v)

is exactly the reverse-time SDE drift (the bracket equals the noise estimate
eps_hat = y + (1 - tau) v, and -eps_hat / tau is the score), and a DENOISING
move from level u down to level s < u is

    y_s = y_u - b * (u - s) + sigma * sqrt(u - s) * eps.

`em_step` keeps the forward-time sign (y + b * dtau) as the primitive formula;
`em_denoise` / `em_denoise_logprob` are the reverse-time compositions the
policy rollouts actually use.
"""

from __future__ import annotations

import math

import torch

from .errors import DiracKernelError, DomainError, SingularDriftError
from .numerics import RngStream, gaussian_sample
from .schedule import NoiseSchedule

LINEAR = NoiseSchedule("linear")


def gaussian_logpdf_iso(x: torch.Tensor, mean: torch.Tensor, var: float) -> torch.Tensor:
    """Full log-density of N(mean, var * I) at x. Oracle-grade; keeps constants."""
    if var <= 0:
        raise DiracKernelError(f"variance must be positive, got {var}")
    d = x.numel()
    quad = ((x - mean) ** 2).sum() / (2.0 * var)
    return -quad - 0.5 * d * math.log(2.0 * math.pi * var)


# ---------------------------------------------------------------------------
# consistency kernel


def consistency_sample(
    x_hat: torch.Tensor, s: float, stream: RngStream, sched: NoiseSchedule = LINEAR
) -> torch.Tensor:
    """Draw z_s = alpha(s) * x_hat + sigma(s) * eps; exactly x_hat at s = 0."""
    a, sig = sched.alpha_sigma(s)
    eps = gaussian_sample(stream, x_hat.shape)
    return a * x_hat + sig * eps


def consistency_mean(x_hat: torch.Tensor, s: float, sched: NoiseSchedule = LINEAR) -> torch.Tensor:
    a, _ = sched.alpha_sigma(s)
    return a * x_hat


def _sigma_checked(s: float, sched: NoiseSchedule) -> tuple[float, float]:
    a, sig = sched.alpha_sigma(s)
    if sig == 0.0:
        raise DiracKernelError(f"kernel at level s={s} has sigma=0 (point mass)")
    return a, sig


def consistency_logprob_reduced(
    z_s: torch.Tensor, x_hat: torch.Tensor, s: float, sched: NoiseSchedule = LINEAR
) -> torch.Tensor:
    """-||z_s - alpha(s) x_hat||^2 / (2 sigma(s)^2); normalization dropped."""
    a, sig = _sigma_checked(s, sched)
    return -((z_s - a * x_hat) ** 2).sum() / (2.0 * sig * sig)


def consistency_logprob_full(
    z_s: torch.Tensor, x_hat: torch.Tensor, s: float, sched: NoiseSchedule = LINEAR
) -> torch.Tensor:
    """Full Gaussian log-density of the consistency kernel (test oracle only)."""
    a, sig = _sigma_checked(s, sched)
    return gaussian_logpdf_iso(z_s, a * x_hat, sig * sig)


def cmgrpo_endpoint_gradient(
    z_s: torch.Tensor, x_hat: torch.Tensor, s: float, adv: float, sched: NoiseSchedule = LINEAR
) -> torch.Tensor:
    """Analytic d/dx_hat of (-adv * reduced log-prob): -adv * alpha * (z_s - alpha x_hat) / sigma^2."""
    a, sig = _sigma_checked(s, sched)
    return -adv * a * (z_s - a * x_hat) / (sig * sig)


def consistency_kl(
    x_hat_theta: torch.Tensor, x_hat_ref: torch.Tensor, s: float, sched: NoiseSchedule = LINEAR
) -> torch.Tensor:
    """KL between two consistency kernels at the same level s (equal variances):
    alpha(s)^2 * ||x_hat_theta - x_hat_ref||^2 / (2 sigma(s)^2)."""
    a, sig = _sigma_checked(s, sched)
    return (a * a) * ((x_hat_theta - x_hat_ref) ** 2).sum() / (2.0 * sig * sig)


# ---------------------------------------------------------------------------
# Euler-Maruyama kernel


def endpoint_to_velocity(y: torch.Tensor, x_hat: torch.Tensor, tau: float) -> torch.Tensor:
    """Linear-path velocity adapter v = (y - x_hat) / tau; needs tau > 0."""
    if tau <= 0:
        raise SingularDriftError(f"velocity adapter undefined at tau={tau}")
    return (y - x_hat) / tau


def em_drift(v: torch.Tensor, y: torch.Tensor, tau: float, sigma_tau: float) -> torch.Tensor:
    """b = v + (sigma^2 / (2 tau)) * (y + (1 - tau) * v)."""
    if tau <= 0:
        raise SingularDriftError(f"drift is singular at tau={tau}")
    return v + (sigma_tau * sigma_tau / (2.0 * tau)) * (y + (1.0 - tau) * v)


def em_step(
    y: torch.Tensor,
    v: torch.Tensor,
    tau: float,
    dtau: float,
    sigma_tau: float,
    stream: RngStream,
) -> torch.Tensor:
    """One forward-time stochastic step y + b * dtau + sigma * sqrt(dtau) * eps."""
    if dtau <= 0:
        raise DomainError(f"step size must be positive, got {dtau}")
    b = em_drift(v, y, tau, sigma_tau)
    eps = gaussian_sample(stream, y.shape)
    return y + b * dtau + sigma_tau * math.sqrt(dtau) * eps


def em_logprob(
    y_next: torch.Tensor,
    y: torch.Tensor,
    v: torch.Tensor,
    tau: float,
    dtau: float,
    sigma_tau: float,
) -> torch.Tensor:
    """Full Gaussian log-density of em_step: mean y + b*dtau, variance sigma^2*dtau."""
    if dtau <= 0:
        raise DomainError(f"step size must be positive, got {dtau}")
    if sigma_tau <= 0:
        raise DiracKernelError(f"EM kernel with sigma={sigma_tau} is a point mass")
    b = em_drift(v, y, tau, sigma_tau)
    return gaussian_logpdf_iso(y_next, y + b * dtau, sigma_tau * sigma_tau * dtau)


# Reverse-time (denoising) compositions used by the EM policy rollouts.


def em_denoise_mean(y_u: torch.Tensor, x_hat: torch.Tensor, u: float, s: float, sigma_tau: float) -> torch.Tensor:
    """Mean of the denoising transition from level u down to level s < u."""
    if not s < u:
        raise DomainError(f"denoising needs s < u, got u={u}, s={s}")
    v = endpoint_to_velocity(y_u, x_hat, u)
    b = em_drift(v, y_u, u, sigma_tau)
    return y_u - b * (u - s)


def em_denoise(
    y_u: torch.Tensor,
    x_hat: torch.Tensor,
    u: float,
    s: float,
    sigma_tau: float,
    stream: RngStream,
) -> torch.Tensor:
    """Sample the denoising transition: mean + sigma * sqrt(u - s) * eps."""
    mean = em_denoise_mean(y_u, x_hat, u, s, sigma_tau)
    eps = gaussian_sample(stream, y_u.shape)
    return mean + sigma_tau * math.sqrt(u - s) * eps


def em_denoise_logprob(
    y_s: torch.Tensor,
    y_u: torch.Tensor,
    x_hat: torch.Tensor,
    u: float,
    s: float,
    sigma_tau: float,
) -> torch.Tensor:
    """Full Gaussian log-density of em_denoise (variance sigma^2 * (u - s))."""
    if sigma_tau <= 0:
        raise DiracKernelError(f"EM kernel with sigma={sigma_tau} is a point mass")
    mean = em_denoise_mean(y_u, x_hat, u, s, sigma_tau)
    return gaussian_logpdf_iso(y_s, mean, sigma_tau * sigma_tau * (u - s))
