"""Two-stage training: joint pretraining of the extractor and decoder, then
joint training of the few-step diffusion estimator through the unrolled
reverse chain. Includes the loss library, Adam, and the ablation variants.

Variants (stage 2 only):
  v1  no diffusion: the condition vector itself conditions the decoder and
      only the task loss trains it (no teacher regression)
  v2  decoupled single-timestep denoiser training; decoder keeps the teacher prior
  v3  joint training through the full unrolled reverse chain (default)
  v4  v3 with per-step sampling noise in the reverse process
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import (
    NOISE_INCLUSIVE,
    VARIANCE_FREE,
    ReverseConfig,
    diffuse_to_endpoint,
    reverse_chain,
)
from .errors import ConfigError, DimensionError, NumericalError
from .networks import ModelBundle, ModelConfig
from .schedule import Schedule
from .tasks import TaskSample, psnr
from .tensor import Param, Tensor

VARIANTS = ("v1", "v2", "v3", "v4")


# -- loss library ---------------------------------------------------------------


def _check_same_shape(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"loss operands differ in shape: {a.shape} vs {b.shape}")


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute difference; doubles as the reconstruction task loss."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    _check_same_shape(pred, target)
    return (pred - target).abs().mean()


def l2_loss(pred: Tensor, target) -> Tensor:
    """Mean squared difference."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    _check_same_shape(pred, target)
    diff = pred - target
    return (diff * diff).mean()


def kl_loss(pred: Tensor, target) -> Tensor:
    """KL divergence of the softmax-normalized target from the softmax of the
    prediction, summed over the vector and averaged over the batch. Invariant
    to a constant shift of the prediction."""
    target_vals = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != target_vals.shape:
        raise DimensionError(f"loss operands differ in shape: {pred.shape} vs {target_vals.shape}")
    t = target_vals - target_vals.max(axis=-1, keepdims=True)
    p = np.exp(t)
    p /= p.sum(axis=-1, keepdims=True)
    entropy = (p * np.log(p)).sum(axis=-1)  # constant w.r.t. the prediction
    shift = pred - pred.data.max(axis=-1, keepdims=True)
    log_q = shift - shift.exp().sum(axis=-1, keepdims=True).log()
    cross = (log_q * Tensor(p)).sum(axis=-1)
    return (Tensor(entropy) - cross).mean()


DM_LOSSES = {"l_diff": l1_loss, "l2": l2_loss, "kl": kl_loss}


# -- optimizer -------------------------------------------------------------------


class Adam:
    """Adam over named parameters; mutates data in place, never shapes."""

    def __init__(self, params, lr: float = 2e-4, betas=(0.9, 0.99), eps: float = 1e-8):
        self.params: list[Param] = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self._m = {p.id: np.zeros_like(p.data) for p in self.params}
        self._v = {p.id: np.zeros_like(p.data) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.tensor.zero_grad()

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p in self.params:
            g = p.tensor.grad
            if g is None:
                continue
            m = self._m[p.id]
            v = self._v[p.id]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p.tensor.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_global_norm(params, max_norm: float) -> float:
    """Scale all gradients so their joint norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.tensor.grad is not None:
            total += float(np.sum(p.tensor.grad * p.tensor.grad))
    total = np.sqrt(total)
    if total > max_norm > 0.0:
        scale = max_norm / total
        for p in params:
            if p.tensor.grad is not None:
                p.tensor.grad = p.tensor.grad * scale
    return float(total)


# -- configuration and logging -----------------------------------------------------


@dataclass
class TrainConfig:
    stage: str = "s1"
    variant: str = "v3"
    dm_loss: str = "l_diff"
    lr: float = 2e-3
    iterations: int = 300
    batch_size: int = 8
    seed: int = 0
    clip_norm: float = 5.0
    log_every: int = 25

    def validate(self) -> "TrainConfig":
        if self.stage not in ("s1", "s2"):
            raise ConfigError(f"stage must be s1 or s2, got {self.stage!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.stage == "s1" and self.variant != "v3":
            raise ConfigError("training-scheme variants apply to stage s2 only")
        if self.dm_loss not in DM_LOSSES:
            raise ConfigError(f"dm_loss must be one of {tuple(DM_LOSSES)}, got {self.dm_loss!r}")
        if self.lr < 0 or self.iterations < 1 or self.batch_size < 1:
            raise ConfigError("lr must be >= 0, iterations and batch_size >= 1")
        return self


@dataclass
class LossReport:
    step: int
    l_task: float
    l_diff: float
    l_all: float
    psnr: float

    def line(self) -> str:
        return (
            f"step={self.step} l_task={self.l_task:.6f} l_diff={self.l_diff:.6f} "
            f"l_all={self.l_all:.6f} psnr={self.psnr:.3f}"
        )


def _stream(*entropy) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=entropy)))


def _batch(samples: list[TaskSample], idx) -> tuple[Tensor, Tensor]:
    inp = np.stack([samples[i].model_input for i in idx])
    gt = np.stack([samples[i].gt for i in idx])
    return Tensor(inp), Tensor(gt)


def _ensure_finite(step: int, **losses) -> None:
    for name, value in losses.items():
        if not np.isfinite(value):
            detail = ", ".join(f"{k}={v}" for k, v in losses.items())
            raise NumericalError(f"non-finite {name} at step {step} ({detail})")


# -- stage 1 -------------------------------------------------------------------


def train_stage1(
    cfg: TrainConfig,
    mcfg: ModelConfig,
    samples: list[TaskSample],
    log_fn=None,
) -> tuple[ModelBundle, list[LossReport]]:
    """Jointly train the teacher extractor and the decoder on the task loss."""
    cfg.validate()
    if cfg.stage != "s1":
        raise ConfigError("train_stage1 requires stage s1")
    bundle = ModelBundle.new_stage1(mcfg, cfg.seed)
    adam = Adam(bundle.trainable_params(), cfg.lr)
    batch_rng = _stream(cfg.seed, 10)
    reports: list[LossReport] = []
    for step in range(1, cfg.iterations + 1):
        idx = batch_rng.integers(0, len(samples), size=cfg.batch_size)
        inp, gt = _batch(samples, idx)
        z = bundle.extract_prior(gt, inp)
        out = bundle.decode(inp, z)
        loss = l1_loss(out, gt)
        l_task = loss.item()
        _ensure_finite(step, l_task=l_task)
        adam.zero_grad()
        loss.backward()
        clip_global_norm(adam.params, cfg.clip_norm)
        adam.step()
        if step == 1 or step % cfg.log_every == 0 or step == cfg.iterations:
            rep = LossReport(step, l_task, 0.0, l_task, psnr(out.data, gt.data))
            reports.append(rep)
            if log_fn:
                log_fn(rep)
    return bundle, reports


# -- stage 2 -------------------------------------------------------------------


def train_stage2(
    cfg: TrainConfig,
    schedule: Schedule,
    s1_bundle: ModelBundle,
    samples: list[TaskSample],
    log_fn=None,
) -> tuple[ModelBundle, list[LossReport]]:
    """Train the condition extractor, noise predictor, and decoder jointly;
    the teacher extractor stays frozen and supplies the regression target."""
    cfg.validate()
    if cfg.stage != "s2":
        raise ConfigError("train_stage2 requires stage s2")
    bundle = ModelBundle.new_stage2(s1_bundle, cfg.seed)
    adam = Adam(bundle.trainable_params(), cfg.lr)
    dm_loss_fn = DM_LOSSES[cfg.dm_loss]
    batch_rng = _stream(cfg.seed, 10)
    noise_rng = _stream(cfg.seed, 11)
    step_rng = _stream(cfg.seed, 12)
    mode = NOISE_INCLUSIVE if cfg.variant == "v4" else VARIANCE_FREE
    chain_rng = _stream(cfg.seed, 13) if mode == NOISE_INCLUSIVE else None
    d_dim = bundle.config.prior_dim
    reports: list[LossReport] = []

    for step in range(1, cfg.iterations + 1):
        idx = batch_rng.integers(0, len(samples), size=cfg.batch_size)
        inp, gt = _batch(samples, idx)
        z_teacher = bundle.extract_prior(gt, inp)  # frozen teacher: plain values

        if cfg.variant == "v2":
            # Decoupled scheme: the denoiser sees one random timestep per step
            # and the decoder keeps training on the teacher prior. The two
            # paths share no parameters, so one backward serves both.
            t = int(step_rng.integers(1, schedule.T + 1))
            eps = noise_rng.standard_normal((cfg.batch_size, d_dim))
            abar = schedule.alpha_bar(t)
            z_t = np.sqrt(abar) * z_teacher.data + np.sqrt(1.0 - abar) * eps
            d = bundle.extract_condition(inp)
            eps_hat = bundle.chain_denoiser(schedule)(Tensor(z_t), t, d)
            resid = eps_hat - Tensor(eps)
            l_dm_t = (resid * resid).sum(axis=1).mean()
            out = bundle.decode(inp, Tensor(z_teacher.data))
        elif cfg.variant == "v1":
            # No diffusion anywhere: the condition vector conditions the
            # decoder directly and only the task loss shapes it.
            z_hat = bundle.extract_condition(inp)
            l_dm_t = Tensor(np.zeros(()))
            out = bundle.decode(inp, z_hat)
        else:
            noise = noise_rng.standard_normal((cfg.batch_size, d_dim))
            z_end = diffuse_to_endpoint(z_teacher, schedule, noise)
            d = bundle.extract_condition(inp)
            rcfg = ReverseConfig(schedule, mode, rng=chain_rng)
            z_hat = reverse_chain(z_end, d, bundle.chain_denoiser(schedule), rcfg)
            l_dm_t = dm_loss_fn(z_hat, z_teacher)
            out = bundle.decode(inp, z_hat)

        l_task_t = l1_loss(out, gt)
        l_all_t = l_task_t + l_dm_t
        l_task, l_dm, l_all = l_task_t.item(), l_dm_t.item(), l_all_t.item()
        _ensure_finite(step, l_task=l_task, l_diff=l_dm, l_all=l_all)
        adam.zero_grad()
        l_all_t.backward()
        clip_global_norm(adam.params, cfg.clip_norm)
        adam.step()
        if step == 1 or step % cfg.log_every == 0 or step == cfg.iterations:
            rep = LossReport(step, l_task, l_dm, l_all, psnr(out.data, gt.data))
            reports.append(rep)
            if log_fn:
                log_fn(rep)
    return bundle, reports


def train(
    cfg: TrainConfig,
    mcfg: ModelConfig,
    schedule: Schedule,
    samples: list[TaskSample],
    s1_bundle: ModelBundle | None = None,
    log_fn=None,
) -> tuple[ModelBundle, list[LossReport]]:
    """Stage dispatch; stage s2 requires a trained stage-1 bundle."""
    if cfg.stage == "s1":
        return train_stage1(cfg, mcfg, samples, log_fn)
    if s1_bundle is None:
        raise ConfigError("stage s2 training needs the trained stage-1 bundle")
    return train_stage2(cfg, schedule, s1_bundle, samples, log_fn)
