"""Procedural toy image-to-image tasks (inpainting, super-resolution) and
desk-scale metrics.

Every sample is a pure function of (spec, index): images come from a PCG64
generator seeded with SeedSequence((spec.seed, index, stream)), so datasets
are bit-reproducible across platforms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import ConfigError, DimensionError

_IMAGE_STREAM = 0
_MASK_STREAM = 1


@dataclass(frozen=True)
class ToyDatasetSpec:
    kind: str = "inpaint"  # "inpaint" | "sr"
    image_size: int = 32
    channels: int = 1
    count: int = 512
    seed: int = 0
    mask_ratio: float = 0.3
    scale: int = 2

    def validate(self) -> "ToyDatasetSpec":
        if self.kind not in ("inpaint", "sr"):
            raise ConfigError(f"unknown task kind {self.kind!r}")
        if self.kind == "inpaint" and not 0.0 <= self.mask_ratio <= 1.0:
            raise ConfigError(f"mask_ratio must be in [0, 1], got {self.mask_ratio}")
        if self.kind == "sr":
            if self.scale < 1:
                raise ConfigError(f"scale must be >= 1, got {self.scale}")
            if self.image_size % self.scale:
                raise ConfigError(
                    f"image_size {self.image_size} not divisible by scale {self.scale}"
                )
        if self.count < 1 or self.image_size < 4 or self.channels < 1:
            raise ConfigError("dataset needs count >= 1, image_size >= 4, channels >= 1")
        return self


@dataclass
class TaskSample:
    """Degraded input, clean target, and task metadata.

    For super-resolution ``input`` holds the low-res image; ``model_input``
    is the nearest-neighbor upsampled version whose shape matches the target.
    """

    input: np.ndarray
    gt: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def model_input(self) -> np.ndarray:
        scale = self.meta.get("scale")
        if scale is None:
            return self.input
        return self.input.repeat(scale, axis=1).repeat(scale, axis=2)


def _rng_for(spec: ToyDatasetSpec, index: int, stream: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=(spec.seed, index, stream)))
    )


def _smoothstep(x: np.ndarray) -> np.ndarray:
    t = np.clip(x, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def generate_image(spec: ToyDatasetSpec, index: int) -> np.ndarray:
    """Deterministic procedural image in [0, 1]: a smooth random gradient plus
    soft-edged disks and boxes, min-max normalized per channel."""
    spec.validate()
    if not 0 <= index < spec.count:
        raise IndexError(f"index {index} outside dataset of {spec.count} samples")
    rng = _rng_for(spec, index, _IMAGE_STREAM)
    n = spec.image_size
    yy, xx = np.meshgrid(np.linspace(0, 1, n), np.linspace(0, 1, n), indexing="ij")
    aa = 1.5 / n  # soft-edge width of the primitives
    out = np.empty((spec.channels, n, n))
    for c in range(spec.channels):
        coeff = rng.uniform(-1.0, 1.0, 4)
        img = coeff[0] + coeff[1] * xx + coeff[2] * yy + coeff[3] * xx * yy
        for _ in range(rng.integers(1, 3)):
            cx, cy = rng.uniform(0.15, 0.85, 2)
            radius = rng.uniform(0.08, 0.3)
            amp = rng.uniform(-1.0, 1.0)
            dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
            img += amp * _smoothstep((radius - dist) / aa + 0.5)
        for _ in range(rng.integers(0, 2)):
            x0, y0 = rng.uniform(0.1, 0.6, 2)
            wdt, hgt = rng.uniform(0.15, 0.35, 2)
            amp = rng.uniform(-1.0, 1.0)
            inside_x = _smoothstep((xx - x0) / aa + 0.5) * _smoothstep((x0 + wdt - xx) / aa + 0.5)
            inside_y = _smoothstep((yy - y0) / aa + 0.5) * _smoothstep((y0 + hgt - yy) / aa + 0.5)
            img += amp * inside_x * inside_y
        lo, hi = img.min(), img.max()
        out[c] = (img - lo) / (hi - lo) if hi - lo > 1e-9 else np.full_like(img, 0.5)
    return out


def _blob_mask(spec: ToyDatasetSpec, index: int) -> np.ndarray:
    """Binary mask covering exactly round(ratio * H * W) pixels, chosen as the
    lowest values of a smooth random field so the masked region is blobby."""
    n = spec.image_size
    k = int(round(spec.mask_ratio * n * n))
    if k == 0:
        return np.zeros((n, n))
    if k == n * n:
        return np.ones((n, n))
    rng = _rng_for(spec, index, _MASK_STREAM)
    yy, xx = np.meshgrid(np.linspace(0, 1, n), np.linspace(0, 1, n), indexing="ij")
    fld = np.zeros((n, n))
    for i in range(3):
        for j in range(3):
            fld += rng.normal() * np.cos(math.pi * (i * xx + j * yy) + rng.uniform(0, math.pi))
    mask = np.zeros(n * n)
    mask[np.argsort(fld.reshape(-1), kind="stable")[:k]] = 1.0
    return mask.reshape(n, n)


def box_downsample(img: np.ndarray, scale: int) -> np.ndarray:
    """Mean over non-overlapping scale x scale blocks."""
    c, h, w = img.shape
    if h % scale or w % scale:
        raise DimensionError(f"dims ({h}, {w}) not divisible by scale {scale}")
    return img.reshape(c, h // scale, scale, w // scale, scale).mean(axis=(2, 4))


def make_sample(spec: ToyDatasetSpec, index: int) -> TaskSample:
    spec.validate()
    gt = generate_image(spec, index)
    if spec.kind == "inpaint":
        mask = _blob_mask(spec, index)
        inp = gt * (1.0 - mask) + 0.5 * mask
        return TaskSample(inp, gt, {"mask": mask})
    low = box_downsample(gt, spec.scale)
    return TaskSample(low, gt, {"scale": spec.scale})


def make_dataset(spec: ToyDatasetSpec) -> list[TaskSample]:
    return [make_sample(spec, i) for i in range(spec.count)]


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 * log10(1 / MSE) for unit dynamic range, capped at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return 99.0
    return 10.0 * math.log10(1.0 / mse)


def save_png(img: np.ndarray, path) -> None:
    """Write a [C, H, W] float image in [0, 1] as an 8-bit PNG."""
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    quantized = np.round(arr * 255.0).astype(np.uint8)
    if quantized.shape[0] == 1:
        Image.fromarray(quantized[0], mode="L").save(path)
    elif quantized.shape[0] == 3:
        Image.fromarray(quantized.transpose(1, 2, 0), mode="RGB").save(path)
    else:
        raise DimensionError(f"PNG export supports 1 or 3 channels, got {quantized.shape[0]}")


def load_png(path) -> np.ndarray:
    """Read a PNG back into a [C, H, W] float array in [0, 1]."""
    img = Image.open(path)
    arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        return arr[None, :, :]
    return arr.transpose(2, 0, 1)
