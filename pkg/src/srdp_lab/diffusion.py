"""Noise schedules and the closed-form forward / iterative reverse diffusion maps.

Timesteps are 1-based: t runs over {1, ..., T}. Internally the schedule
tables are 0-indexed, so betas[t-1] is the rate at timestep t.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericError, UsageError

SCHEDULE_KINDS = ("linear", "vp")


class NoiseSchedule:
    """Immutable per-timestep beta/alpha/alpha-bar tables."""

    __slots__ = ("T", "betas", "alphas", "alpha_bars", "kind", "beta_min", "beta_max")

    def __init__(self, betas, kind="custom", beta_min=None, beta_max=None):
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ConfigError("betas must be a non-empty 1-D vector")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ConfigError("all betas must lie strictly inside (0, 1)")
        self.T = int(betas.size)
        self.betas = betas
        self.alphas = 1.0 - betas
        self.alpha_bars = np.cumprod(self.alphas)
        self.kind = kind
        self.beta_min = beta_min
        self.beta_max = beta_max
        self.betas.setflags(write=False)
        self.alphas.setflags(write=False)
        self.alpha_bars.setflags(write=False)

    def check_t(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise UsageError(f"timestep {t} outside 1..{self.T}")

    def describe(self):
        return (
            f"kind={self.kind},T={self.T},"
            f"beta_min={self.beta_min},beta_max={self.beta_max}"
        )


def build_schedule(kind, T, beta_min, beta_max):
    """Build a schedule.

    linear: betas interpolate linearly from beta_min to beta_max (both in (0,1)).
    vp: variance-preserving discretization; beta_min/beta_max are continuous-time
        rates (may exceed 1), betas_t = 1 - exp(-b_min/T - (b_max-b_min)(2t-1)/(2T^2)).
    """
    T = int(T)
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_min <= beta_max):
        raise ConfigError(f"need 0 < beta_min <= beta_max, got {beta_min}, {beta_max}")
    if kind == "linear":
        if beta_max >= 1.0:
            raise ConfigError("linear schedule needs beta_max < 1")
        betas = np.linspace(beta_min, beta_max, T)
    elif kind == "vp":
        t = np.arange(1, T + 1, dtype=np.float64)
        betas = 1.0 - np.exp(
            -beta_min / T - 0.5 * (beta_max - beta_min) * (2.0 * t - 1.0) / T**2
        )
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(betas, kind=kind, beta_min=float(beta_min), beta_max=float(beta_max))


def default_schedule(T=5):
    """Linear betas spanning [0.1, 0.9]; at T=5 this leaves alpha_bar_T < 0.01."""
    return build_schedule("linear", T, 0.1, 0.9)


def forward_noise(x0, t, eps, sched):
    """Closed-form noising: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.

    x0 and eps may be vectors or (batch, dim) matrices; t may be scalar or a
    per-row vector of timesteps.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise UsageError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    sched.check_t(t)
    ab = sched.alpha_bars[np.asarray(t) - 1]
    if x0.ndim == 2 and np.ndim(ab) == 1:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def reverse_coefficients(t, sched):
    """(c1, c2, sigma) with a_{t-1} = c1 * (a_t - c2 * eps_pred) + sigma * noise."""
    sched.check_t(t)
    alpha = sched.alphas[t - 1]
    abar = sched.alpha_bars[t - 1]
    c1 = 1.0 / np.sqrt(alpha)
    c2 = (1.0 - alpha) / np.sqrt(1.0 - abar)
    sigma = np.sqrt(sched.betas[t - 1])
    return c1, c2, sigma


def reverse_step(a_t, eps_pred, t, sched, noise):
    """One reverse-chain denoising step; t is a scalar timestep in 1..T."""
    a_t = np.asarray(a_t, dtype=np.float64)
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if a_t.shape != eps_pred.shape or a_t.shape != noise.shape:
        raise UsageError("a_t, eps_pred and noise must share a shape")
    if not (np.all(np.isfinite(a_t)) and np.all(np.isfinite(eps_pred))):
        raise NumericError(f"non-finite input to reverse_step at t={t}")
    c1, c2, sigma = reverse_coefficients(int(t), sched)
    out = c1 * (a_t - c2 * eps_pred) + sigma * noise
    if not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite reverse_step output at t={t}")
    return out
