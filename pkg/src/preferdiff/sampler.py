"""Deterministic DDIM inference with classifier-free guidance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Condition, ModelParams, denoise, unconditional
from .numerics import Tensor
from .schedule import DiffusionSchedule


@dataclass(frozen=True)
class SamplerConfig:
    ddim_steps: int = 20
    guidance_weight: float = 2.0
    seed: int = 0

    def validate(self, T: int) -> None:
        if not 1 <= self.ddim_steps <= T:
            raise ValueError(f"ddim_steps must lie in 1..{T}, got {self.ddim_steps}")
        if self.guidance_weight < 0:
            raise ValueError(f"guidance weight must be >= 0, got {self.guidance_weight}")


def step_grid(T: int, S: int) -> list[int]:
    """Original-chain steps visited by an S-step sampler, in visiting order."""
    return [(s * T) // S for s in range(S, 0, -1)]


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def guided_x0(params: ModelParams, e_t, t, cond: Condition, w: float) -> np.ndarray:
    """(1 + w)·F(e_t, cond) − w·F(e_t, Φ), written as a + w·(a − b)."""
    cond_out = _arr(denoise(params, e_t, t, cond))
    if w == 0:
        return cond_out
    batch = None if np.ndim(_arr(e_t)) == 1 else _arr(e_t).shape[0]
    free_out = _arr(denoise(params, e_t, t, unconditional(params, batch)))
    return cond_out + w * (cond_out - free_out)


def ddim_step(schedule: DiffusionSchedule, e_t, t: int, x0_hat, t_prev: int | None = None) -> np.ndarray:
    """One σ=0 DDIM update from step ``t`` to ``t_prev`` (default ``t - 1``).

    ε̂ = (e_t − √ᾱ_t·x̂₀)/√(1−ᾱ_t);  e_prev = √ᾱ_prev·x̂₀ + √(1−ᾱ_prev)·ε̂
    """
    if t < 1:
        raise ValueError("ddim_step called at t=0: the chain has already reached its clean state")
    if t_prev is None:
        t_prev = t - 1
    if not 0 <= t_prev < t:
        raise ValueError(f"t_prev must lie in 0..{t - 1}, got {t_prev}")
    e_t, x0_hat = _arr(e_t), _arr(x0_hat)
    ab = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t_prev)
    eps_hat = (e_t - np.sqrt(ab) * x0_hat) / np.sqrt(1.0 - ab)
    return np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps_hat


def predicted_noise(schedule: DiffusionSchedule, e_t, t: int, x0_hat) -> np.ndarray:
    ab = schedule.alpha_bar(t)
    return (_arr(e_t) - np.sqrt(ab) * _arr(x0_hat)) / np.sqrt(1.0 - ab)


def sample(
    params: ModelParams,
    schedule: DiffusionSchedule,
    cond: Condition,
    cfg: SamplerConfig,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Generate x̂₀ for each condition row, starting from e_T ~ N(0, I).

    ``noise`` supplies e_T directly; otherwise it is drawn from ``cfg.seed``.
    Between grid points the chain jumps straight to the next visited step,
    and the final update lands on ᾱ_0 = 1.
    """
    cfg.validate(schedule.T)
    d = params.config.dim
    rows = cond.vector.shape[0] if cond.vector.ndim == 2 else None
    if noise is None:
        rng = np.random.default_rng(cfg.seed)
        noise = rng.standard_normal(d if rows is None else (rows, d))
    e = np.array(noise, dtype=np.float64)
    grid = step_grid(schedule.T, cfg.ddim_steps)
    x0 = e
    for i, t in enumerate(grid):
        t_prev = grid[i + 1] if i + 1 < len(grid) else 0
        x0 = guided_x0(params, e, t, cond, cfg.guidance_weight)
        e = ddim_step(schedule, e, t, x0, t_prev)
    return x0
