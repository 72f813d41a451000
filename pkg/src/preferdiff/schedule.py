"""Linear variance-preserving noise schedule and the forward noising map.

Steps are numbered 1..T at every public boundary. Internally the arrays are
0-based, so ``betas[t - 1]`` is the value for step ``t``. ``alpha_bar(0)``
is defined as 1 so the last sampler update lands on the clean estimate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Tensor


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def _check(self, t: int, allow_zero: bool = False) -> None:
        lo = 0 if allow_zero else 1
        if not (lo <= int(t) <= self.T):
            raise IndexError(f"diffusion step {t} outside {lo}..{self.T}")

    def beta(self, t: int) -> float:
        self._check(t)
        return float(self.betas[t - 1])

    def alpha_bar(self, t):
        """ᾱ at step(s) ``t``; accepts an int or an integer array, 0 maps to 1."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise IndexError(f"diffusion step outside 0..{self.T}")
        padded = np.concatenate(([1.0], self.alpha_bars))
        out = padded[t]
        return float(out) if out.ndim == 0 else out

    def rows(self):
        for t in range(1, self.T + 1):
            yield t, self.betas[t - 1], self.alphas[t - 1], self.alpha_bars[t - 1]


def build_linear_schedule(T: int = 2000, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    if int(T) != T or T < 1:
        raise ConfigurationError(f"T must be a positive integer, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigurationError(
            f"need 0 < beta_start <= beta_end < 1, got beta_start={beta_start}, beta_end={beta_end}"
        )
    T = int(T)
    if T == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        # (T - 1) denominator so both endpoints are hit exactly
        step = (beta_end - beta_start) / (T - 1)
        betas = beta_start + np.arange(T, dtype=np.float64) * step
        betas[-1] = beta_end
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    for arr in (betas, alphas, alpha_bars):
        arr.setflags(write=False)
    return DiffusionSchedule(T, betas, alphas, alpha_bars)


def forward_noise(schedule: DiffusionSchedule, e0, t, eps):
    """√ᾱ_t·e0 + √(1−ᾱ_t)·eps.

    ``t`` may be a scalar step or an integer array with one step per row of
    ``e0``. Tensor inputs stay on the tape; the coefficients are constants.
    """
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > schedule.T):
        raise IndexError(f"diffusion step outside 1..{schedule.T}")
    ab = schedule.alpha_bar(t_arr)
    if np.ndim(ab):
        ab = np.asarray(ab)[:, None]
    a = np.sqrt(ab)
    b = np.sqrt(1.0 - ab)
    if isinstance(e0, Tensor) or isinstance(eps, Tensor):
        e0 = e0 if isinstance(e0, Tensor) else Tensor(e0)
        eps = eps if isinstance(eps, Tensor) else Tensor(eps)
        if np.ndim(a):
            return e0 * Tensor(a) + eps * Tensor(b)
        return e0 * float(a) + eps * float(b)
    return a * np.asarray(e0, dtype=np.float64) + b * np.asarray(eps, dtype=np.float64)
