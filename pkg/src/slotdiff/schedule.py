"""Noise schedules and the closed-form forward diffusion process.

Timesteps are 1-indexed: t runs from 1 to T, and alpha_bar_at(0) is 1 so the
t=0 "state" is the clean input. Schedule arrays are float64; coefficients are
cast to the payload dtype at use sites.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray  # [T] float64, beta[i] is the rate at t = i+1

    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise ValueError("beta must be a 1-D array with at least one step")
        if np.any(beta <= 0.0) or np.any(beta >= 1.0):
            raise ValueError("every beta must lie strictly inside (0, 1)")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", 1.0 - beta)
        object.__setattr__(self, "alpha_bar", np.cumprod(1.0 - beta))

    @property
    def T(self) -> int:
        return self.beta.size

    def _check_t(self, t: np.ndarray, allow_zero: bool = False) -> np.ndarray:
        t = np.asarray(t)
        lo = 0 if allow_zero else 1
        if np.any(t < lo) or np.any(t > self.T):
            raise ValueError(f"timestep out of range [{lo}, {self.T}]: {t}")
        return t

    def beta_at(self, t) -> np.ndarray:
        return self.beta[self._check_t(t) - 1]

    def alpha_at(self, t) -> np.ndarray:
        return self.alpha[self._check_t(t) - 1]

    def alpha_bar_at(self, t) -> np.ndarray:
        """Cumulative product; alpha_bar_at(0) = 1 by convention."""
        t = self._check_t(t, allow_zero=True)
        padded = np.concatenate([[1.0], self.alpha_bar])
        return padded[t]

    def posterior_variance(self, t) -> np.ndarray:
        """Variance of q(z_{t-1} | z_t, z_0); zero at t = 1."""
        t = self._check_t(t)
        return self.beta_at(t) * (1.0 - self.alpha_bar_at(t - 1)) \
            / (1.0 - self.alpha_bar_at(t))


def linear_schedule(T: int = 1000, beta_start: float = 1e-4,
                    beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ValueError(f"T must be positive, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, "
                         f"got ({beta_start}, {beta_end})")
    return NoiseSchedule(np.linspace(beta_start, beta_end, T, dtype=np.float64))


def constant_schedule(T: int, beta: float) -> NoiseSchedule:
    """Every step uses the same rate; alpha_bar_t is exactly (1-beta)^t."""
    if T < 1:
        raise ValueError(f"T must be positive, got {T}")
    return NoiseSchedule(np.full(T, beta, dtype=np.float64))


def forward_noise(z0: np.ndarray, t, eps: np.ndarray,
                  schedule: NoiseSchedule) -> np.ndarray:
    """z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.

    t may be a scalar or one value per leading-batch entry of z0.
    """
    z0 = np.asarray(z0)
    eps = np.asarray(eps)
    if z0.shape != eps.shape:
        raise ValueError(f"z0 shape {z0.shape} != eps shape {eps.shape}")
    abar = schedule.alpha_bar_at(t)
    if abar.ndim == 1:
        if abar.shape[0] != z0.shape[0]:
            raise ValueError(f"{abar.shape[0]} timesteps for batch {z0.shape[0]}")
        abar = abar.reshape((-1,) + (1,) * (z0.ndim - 1))
    c0 = np.sqrt(abar).astype(z0.dtype)
    c1 = np.sqrt(1.0 - abar).astype(z0.dtype)
    return c0 * z0 + c1 * eps
