"""Forward diffusion of the prior vector and the few-step reverse chain.

The reverse update is deterministic by default (mean-only); the
noise-inclusive mode adds the classic posterior noise term per step for the
ablation, with no noise at the final step. All functions operate on Tensors
so gradients can flow through the entire unrolled chain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .schedule import Schedule
from .tensor import Tensor

VARIANCE_FREE = "variance_free"
NOISE_INCLUSIVE = "noise_inclusive"


@dataclass
class ReverseConfig:
    schedule: Schedule
    mode: str = VARIANCE_FREE
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if self.mode not in (VARIANCE_FREE, NOISE_INCLUSIVE):
            raise ContractError(f"unknown reverse mode {self.mode!r}")
        if self.mode == NOISE_INCLUSIVE and self.rng is None:
            raise ContractError("noise_inclusive mode needs a seeded rng")


def diffuse_to_endpoint(z, schedule: Schedule, noise: np.ndarray) -> Tensor:
    """Jump straight to the endpoint: sqrt(abar_T) * z + sqrt(1 - abar_T) * noise.

    ``noise`` is a caller-supplied standard Gaussian sample (reparameterized),
    so the map stays differentiable in ``z``.
    """
    z = z if isinstance(z, Tensor) else Tensor(z)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != z.shape:
        raise DimensionError(f"noise shape {noise.shape} != prior shape {z.shape}")
    abar = schedule.alpha_bar(schedule.T)
    return z * float(np.sqrt(abar)) + Tensor(np.sqrt(1.0 - abar) * noise)


def sigma_t(schedule: Schedule, t: int) -> float:
    """Posterior std of the classic stochastic reverse step; zero at t = 1."""
    if t == 1:
        return 0.0
    var = (1.0 - schedule.alpha_bar(t - 1)) / (1.0 - schedule.alpha_bar(t)) * schedule.betas[t - 1]
    return float(np.sqrt(var))


def reverse_step(z_t, eps_hat, t: int, cfg: ReverseConfig) -> Tensor:
    """One reverse update from step t to t-1 given a noise estimate."""
    sched = cfg.schedule
    if not 1 <= t <= sched.T:
        raise ContractError(f"step index {t} outside [1, {sched.T}]")
    z_t = z_t if isinstance(z_t, Tensor) else Tensor(z_t)
    eps_hat = eps_hat if isinstance(eps_hat, Tensor) else Tensor(eps_hat)
    if eps_hat.shape != z_t.shape:
        raise DimensionError(f"noise estimate shape {eps_hat.shape} != state shape {z_t.shape}")
    a = float(sched.alphas[t - 1])
    abar = sched.alpha_bar(t)
    out = (z_t - eps_hat * ((1.0 - a) / np.sqrt(1.0 - abar))) * (1.0 / np.sqrt(a))
    if cfg.mode == NOISE_INCLUSIVE:
        s = sigma_t(sched, t)
        if s > 0.0:
            out = out + Tensor(s * cfg.rng.standard_normal(out.shape))
    return out


def reverse_chain(z_endpoint, cond, denoise_fn, cfg: ReverseConfig) -> Tensor:
    """Run every reverse step from t = T down to 1 and return the estimate.

    ``denoise_fn(z_t, t, cond)`` supplies the per-step noise estimate; the
    whole chain stays on the autodiff graph.
    """
    z = z_endpoint if isinstance(z_endpoint, Tensor) else Tensor(z_endpoint)
    for t in range(cfg.schedule.T, 0, -1):
        eps = denoise_fn(z, t, cond)
        z = reverse_step(z, eps, t, cfg)
    return z


def oracle_denoiser(z_true: np.ndarray, schedule: Schedule):
    """Test anchor: the exact noise a state carries relative to the true prior.

    With this estimator the variance-free chain recovers the true vector
    exactly, because the final step's deviation coefficient vanishes.
    """
    z_true = np.asarray(z_true, dtype=np.float64)

    def fn(z_t, t, cond=None):
        data = z_t.data if isinstance(z_t, Tensor) else np.asarray(z_t)
        abar = schedule.alpha_bar(t)
        return Tensor((data - np.sqrt(abar) * z_true) / np.sqrt(1.0 - abar))

    return fn


def default_noise_scale(schedule: Schedule, t: int) -> float:
    """Coefficient of the signal-independent part of the exact noise estimate.

    The oracle estimate splits as z_t / sqrt(1 - abar_t) minus a term carrying
    the true prior; this returns the first part's coefficient. A learned
    corrector added to this default starts the chain in its contracting
    regime (the start noise is annihilated, the final factor being zero)
    instead of amplifying the endpoint sample by 1 / sqrt(abar_T).
    """
    return float(1.0 / np.sqrt(1.0 - schedule.alpha_bar(t)))
