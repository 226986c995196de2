"""Reverse-process samplers: ancestral DDPM and spaced DDIM with eta control.

The per-step updates are pure functions of (z, t, eps_hat, schedule) so they
can be checked symbolically on scalars. With eta = 0 the DDIM loop draws no
noise after the initial latent, which makes sampling byte-deterministic for
a fixed seed. DDIM with eta = 1 and a full step grid reproduces the DDPM
posterior step exactly.
"""

from __future__ import annotations

import numpy as np

from .schedule import NoiseSchedule
from .tensor import Tensor, no_grad

VARIANCE_CHOICES = ("posterior", "beta")


def ddpm_step(z: np.ndarray, t: int, eps_hat: np.ndarray,
              schedule: NoiseSchedule, noise: np.ndarray | None = None,
              variance: str = "posterior") -> np.ndarray:
    """One ancestral step z_t -> z_{t-1}; the final step (t=1) adds no noise."""
    if variance not in VARIANCE_CHOICES:
        raise ValueError(f"variance must be one of {VARIANCE_CHOICES}")
    beta = float(schedule.beta_at(t))
    alpha = float(schedule.alpha_at(t))
    abar = float(schedule.alpha_bar_at(t))
    mean = (z - (beta / np.sqrt(1.0 - abar)) * eps_hat) / np.sqrt(alpha)
    if t == 1:
        return mean
    if noise is None:
        raise ValueError("noise is required for every step before the last")
    var = float(schedule.posterior_variance(t)) if variance == "posterior" else beta
    return mean + np.sqrt(var) * noise


def ddim_step(z: np.ndarray, t_cur: int, t_prev: int, eps_hat: np.ndarray,
              schedule: NoiseSchedule, eta: float = 0.0,
              noise: np.ndarray | None = None) -> np.ndarray:
    """One spaced step z_{t_cur} -> z_{t_prev} (t_prev may be 0)."""
    if not 0 <= t_prev < t_cur:
        raise ValueError(f"need 0 <= t_prev < t_cur, got ({t_prev}, {t_cur})")
    if eta < 0.0:
        raise ValueError(f"eta must be non-negative, got {eta}")
    abar_c = float(schedule.alpha_bar_at(t_cur))
    abar_p = float(schedule.alpha_bar_at(t_prev))
    x0 = (z - np.sqrt(1.0 - abar_c) * eps_hat) / np.sqrt(abar_c)
    sigma2 = (eta * eta) * (1.0 - abar_p) / (1.0 - abar_c) \
        * (1.0 - abar_c / abar_p)
    direction = np.sqrt(max(1.0 - abar_p - sigma2, 0.0))
    out = np.sqrt(abar_p) * x0 + direction * eps_hat
    if sigma2 > 0.0:
        if noise is None:
            raise ValueError("noise is required when eta > 0")
        out = out + np.sqrt(sigma2) * noise
    return out


def ddim_timesteps(T: int, steps: int) -> np.ndarray:
    """Descending step grid over [1, T]; includes both endpoints."""
    if not 1 <= steps <= T:
        raise ValueError(f"steps must be in [1, {T}], got {steps}")
    if steps == 1:
        return np.array([T])
    return np.round(np.linspace(T, 1, num=steps)).astype(int)


def _predict(model, z: np.ndarray, t: int, slots, cfg_weight: float | None):
    with no_grad():
        if cfg_weight is None or cfg_weight == 1.0:
            out = model.predict_noise(z, t, slots)
        else:
            out = model.cfg_predict(z, t, slots, cfg_weight)
    return np.asarray(getattr(out, "data", out))


def _check_batch(shape, slots) -> None:
    slots = np.asarray(getattr(slots, "data", slots))
    if slots.ndim != 3 or slots.shape[0] != shape[0]:
        raise ValueError(f"slots [B, N, D] must match batch {shape[0]}, "
                         f"got {slots.shape}")


def ddpm_sample(model, slots, schedule: NoiseSchedule, shape: tuple[int, ...],
                rng: np.random.Generator, variance: str = "posterior",
                cfg_weight: float | None = None,
                dtype=np.float32) -> np.ndarray:
    """Full-length ancestral sampling from pure noise."""
    _check_batch(shape, slots)
    z = rng.standard_normal(shape, dtype=dtype)
    for t in range(schedule.T, 0, -1):
        eps_hat = _predict(model, z, t, slots, cfg_weight)
        noise = rng.standard_normal(shape, dtype=dtype) if t > 1 else None
        z = ddpm_step(z, t, eps_hat, schedule, noise, variance).astype(dtype)
    return z


def ddim_sample(model, slots, schedule: NoiseSchedule, shape: tuple[int, ...],
                rng: np.random.Generator, steps: int = 200, eta: float = 1.0,
                cfg_weight: float | None = None,
                dtype=np.float32) -> np.ndarray:
    """Spaced deterministic-to-stochastic sampling (eta interpolates)."""
    _check_batch(shape, slots)
    ts = ddim_timesteps(schedule.T, steps)
    z = rng.standard_normal(shape, dtype=dtype)
    for i, t_cur in enumerate(ts):
        t_prev = int(ts[i + 1]) if i + 1 < len(ts) else 0
        eps_hat = _predict(model, z, int(t_cur), slots, cfg_weight)
        needs_noise = eta > 0.0 and t_prev > 0
        noise = rng.standard_normal(shape, dtype=dtype) if needs_noise else None
        z = ddim_step(z, int(t_cur), t_prev, eps_hat, schedule, eta, noise)
        z = z.astype(dtype)
    return z
