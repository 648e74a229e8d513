"""Diffusion schedule: per-step beta, alpha, and cumulative alpha tables."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError


class Schedule:
    """Immutable table of beta_t, alpha_t = 1 - beta_t and their running
    product for t = 1..T. The empty product at t = 0 is defined as 1."""

    def __init__(self, betas):
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ConfigError("schedule needs at least one beta value")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ConfigError("all betas must lie strictly inside (0, 1)")
        self.betas = betas
        self.alphas = 1.0 - betas
        self.alpha_bars = np.cumprod(self.alphas)
        for a in (self.betas, self.alphas, self.alpha_bars):
            a.setflags(write=False)

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def alpha_bar(self, t: int) -> float:
        """Cumulative product up to step t; t = 0 returns the empty product 1."""
        if t < 0 or t > self.T:
            raise ConfigError(f"alpha_bar index {t} outside [0, {self.T}]")
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def __eq__(self, other) -> bool:
        return isinstance(other, Schedule) and np.array_equal(self.betas, other.betas)


def linear_schedule(T: int, beta_start: float = 0.1, beta_end: float = 0.99) -> Schedule:
    """Betas linearly interpolated from beta_start to beta_end over T steps."""
    if T < 1:
        raise ConfigError(f"step count must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    if T == 1:
        return Schedule(np.array([beta_start]))
    step = (beta_end - beta_start) / (T - 1)
    return Schedule(beta_start + step * np.arange(T, dtype=np.float64))


def solve_beta_end(T: int, beta_start: float = 0.1, target: float = 2e-3) -> float:
    """Find beta_end so the linear schedule's final cumulative alpha equals
    ``target``. Keeps the endpoint of the diffusion close to pure noise for any
    step count. For T = 1 the single beta itself is solved (there is no free
    endpoint to adjust)."""
    if T == 1:
        return 1.0 - target
    lo, hi = beta_start, 1.0 - 1e-12
    if _alpha_bar_final(T, beta_start, lo) <= target:
        return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _alpha_bar_final(T, beta_start, mid) > target:
            lo = mid
        else:
            hi = mid
    return hi


def _alpha_bar_final(T: int, beta_start: float, beta_end: float) -> float:
    betas = beta_start + (beta_end - beta_start) / (T - 1) * np.arange(T)
    return float(np.prod(1.0 - betas))
