"""Plain-text run configuration: one "key = value" per line.

Unknown keys are rejected; every key has a documented default. Blank lines
and lines starting with '#' are ignored.
"""
from __future__ import annotations

from .errors import ConfigError
from .networks import ModelConfig
from .schedule import Schedule, linear_schedule
from .tasks import ToyDatasetSpec
from .training import TrainConfig

# key -> (parser, default, help)
SCHEMA: dict[str, tuple] = {
    "seed": (int, 0, "master seed for init, batching, noise, and inference"),
    "stage": (str, "s1", "pipeline stage of a checkpoint (normally set via --stage)"),
    "task.kind": (str, "inpaint", "toy task: inpaint | sr"),
    "task.image_size": (int, 32, "square image side in pixels"),
    "task.channels": (int, 1, "image channel count"),
    "task.train_count": (int, 512, "training samples"),
    "task.eval_count": (int, 64, "held-out evaluation samples"),
    "task.mask_ratio": (float, 0.3, "inpainting: fraction of masked pixels"),
    "task.scale": (int, 2, "super-resolution: downsampling factor"),
    "model.prior_channels": (int, 8, "base channel constant; prior length is 4x this"),
    "model.decoder_channels": (int, 16, "decoder width at the finest level"),
    "model.levels": (int, 2, "decoder U-net depth"),
    "model.expansion": (int, 2, "pre-gate channel widening inside dynamic blocks"),
    "model.unshuffle": (int, 4, "extractor space-to-depth factor"),
    "model.extractor_width": (int, 32, "extractor conv width"),
    "model.denoiser_width": (int, 64, "noise-predictor hidden width"),
    "schedule.steps": (int, 4, "diffusion step count T"),
    "schedule.beta_start": (float, 0.1, "beta at t = 1"),
    "schedule.beta_end": (float, 0.99, "beta at t = T"),
    "train.lr": (float, 2e-3, "Adam learning rate"),
    "train.iterations": (int, 400, "optimization steps"),
    "train.batch_size": (int, 8, "samples per step"),
    "train.variant": (str, "v3", "stage-2 scheme: v1 | v2 | v3 | v4"),
    "train.dm_loss": (str, "l_diff", "prior regression loss: l_diff | l2 | kl"),
    "train.clip_norm": (float, 5.0, "global gradient-norm clip"),
    "train.log_every": (int, 25, "metrics log cadence in steps"),
}


def parse_config_text(text: str) -> dict:
    values = {key: default for key, (_, default, _) in SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    return values


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc


def serialize_config(values: dict) -> str:
    unknown = sorted(set(values) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown keys: {unknown}")
    lines = []
    for key in SCHEMA:
        if key in values:
            lines.append(f"{key} = {values[key]}")
    return "\n".join(lines) + "\n"


def defaults_help() -> str:
    width = max(len(k) for k in SCHEMA)
    return "\n".join(
        f"  {key:<{width}}  default {default!r:<10}  {help_}"
        for key, (_, default, help_) in SCHEMA.items()
    )


# -- object builders --------------------------------------------------------------


def dataset_spec(values: dict, split: str = "train") -> ToyDatasetSpec:
    """Train and eval splits draw from disjoint seed offsets of the master seed."""
    count = values["task.train_count"] if split == "train" else values["task.eval_count"]
    offset = 0 if split == "train" else 1_000_003
    return ToyDatasetSpec(
        kind=values["task.kind"],
        image_size=values["task.image_size"],
        channels=values["task.channels"],
        count=count,
        seed=values["seed"] + offset,
        mask_ratio=values["task.mask_ratio"],
        scale=values["task.scale"],
    ).validate()


def model_config(values: dict) -> ModelConfig:
    return ModelConfig(
        image_channels=values["task.channels"],
        prior_channels=values["model.prior_channels"],
        decoder_channels=values["model.decoder_channels"],
        levels=values["model.levels"],
        expansion=values["model.expansion"],
        unshuffle=values["model.unshuffle"],
        extractor_width=values["model.extractor_width"],
        denoiser_width=values["model.denoiser_width"],
    ).validate()


def schedule_from(values: dict) -> Schedule:
    return linear_schedule(
        values["schedule.steps"], values["schedule.beta_start"], values["schedule.beta_end"]
    )


def train_config(values: dict, stage: str, variant: str | None = None, dm_loss: str | None = None) -> TrainConfig:
    return TrainConfig(
        stage=stage,
        variant=variant or values["train.variant"],
        dm_loss=dm_loss or values["train.dm_loss"],
        lr=values["train.lr"],
        iterations=values["train.iterations"],
        batch_size=values["train.batch_size"],
        seed=values["seed"],
        clip_norm=values["train.clip_norm"],
        log_every=values["train.log_every"],
    ).validate()
