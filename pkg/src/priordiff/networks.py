"""Learned components: prior extractor, condition extractor, noise predictor,
and the prior-guided U-shaped decoder built from dynamic blocks.

Every block receives the same compact prior vector and injects it additively,
broadcast per channel over all spatial positions. Residual paths make each
block the identity map when its weights are zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .tensor import (
    Param,
    Tensor,
    concat,
    conv2d_depthwise,
    conv2d_pointwise,
    global_avg_pool,
    layer_norm,
    linear,
    pixel_shuffle,
    pixel_unshuffle,
    silu,
    simple_gate,
)


@dataclass(frozen=True)
class ModelConfig:
    """Desk-scale architecture hyperparameters."""

    image_channels: int = 1
    prior_channels: int = 8      # C'; the prior vector has length 4 * C'
    decoder_channels: int = 16   # width of the finest decoder level
    levels: int = 2              # U-net depth
    expansion: int = 2           # pre-gate channel widening inside blocks
    unshuffle: int = 4           # space-to-depth factor of the extractor nets
    extractor_width: int = 32
    denoiser_width: int = 64

    @property
    def prior_dim(self) -> int:
        return 4 * self.prior_channels

    def validate(self) -> "ModelConfig":
        if self.expansion != 2:
            raise ConfigError(
                "expansion must be 2: the gate halves the widened channels and "
                "the depthwise output projection cannot change the count"
            )
        for name in ("image_channels", "prior_channels", "decoder_channels",
                     "levels", "unshuffle", "extractor_width", "denoiser_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1")
        return self


class Net:
    """Base with ordered parameter registration under a name prefix."""

    def __init__(self, prefix: str, rng: np.random.Generator):
        self.prefix = prefix
        self._rng = rng
        self._params: list[Param] = []

    def _weight(self, name: str, shape: tuple, fan_in: int) -> Param:
        arr = self._rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
        return self._register(name, arr)

    def _const(self, name: str, shape: tuple, value: float) -> Param:
        return self._register(name, np.full(shape, value, dtype=np.float64))

    def _register(self, name: str, arr: np.ndarray) -> Param:
        p = Param(f"{self.prefix}.{name}", Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True))
        self._params.append(p)
        return p

    def params(self) -> list[Param]:
        return list(self._params)

    def zero_all_params(self) -> None:
        for p in self._params:
            p.tensor.data[...] = 0.0

    def copy_params_from(self, other: "Net") -> None:
        if [p.id for p in self._params] != [p.id for p in other._params]:
            raise ConfigError("parameter layout mismatch when copying a network")
        for dst, src in zip(self._params, other._params):
            np.copyto(dst.tensor.data, src.tensor.data)

    def freeze(self) -> None:
        for p in self._params:
            p.tensor.requires_grad = False


class _PointwiseConv:
    def __init__(self, net: Net, name: str, c_in: int, c_out: int):
        self.w = net._weight(f"{name}.w", (c_out, c_in), c_in)
        self.b = net._const(f"{name}.b", (c_out,), 0.0)
        self.c_in, self.c_out = c_in, c_out

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d_pointwise(x, self.w, self.b)

    def macs(self, h: int, w: int) -> int:
        return self.c_in * self.c_out * h * w


class _DepthwiseConv:
    def __init__(self, net: Net, name: str, c: int):
        self.w = net._weight(f"{name}.w", (c, 3, 3), 9)
        self.b = net._const(f"{name}.b", (c,), 0.0)
        self.c = c

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d_depthwise(x, self.w, self.b)

    def macs(self, h: int, w: int) -> int:
        return 9 * self.c * h * w


class _Linear:
    INJECT_SCALE = 1e-3

    def __init__(self, net: Net, name: str, d_in: int, d_out: int, inject_init: bool = False):
        # Conditioning layers start near-inert so training sets the prior's
        # scale freely instead of shrinking it to protect the output early on.
        fan = d_in / (self.INJECT_SCALE ** 2) if inject_init else d_in
        self.w = net._weight(f"{name}.w", (d_out, d_in), fan)
        self.b = net._const(f"{name}.b", (d_out,), 0.0)
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.w, self.b)

    def macs(self) -> int:
        return self.d_in * self.d_out


class _LayerNorm:
    def __init__(self, net: Net, name: str, c: int):
        self.g = net._const(f"{name}.g", (c,), 1.0)
        self.b = net._const(f"{name}.b", (c,), 0.0)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.g, self.b)


class AttentionBlock:
    """Channel-attention block modulated by the prior vector.

    norm -> widen (1x1) -> depthwise 3x3 -> gate -> pooled channel weighting
    -> depthwise 3x3 projection, plus the broadcast prior injection and the
    residual input.
    """

    def __init__(self, net: Net, name: str, ch: int, prior_dim: int):
        self.ch = ch
        self.norm = _LayerNorm(net, f"{name}.norm", ch)
        self.widen = _PointwiseConv(net, f"{name}.widen", ch, 2 * ch)
        self.dw_in = _DepthwiseConv(net, f"{name}.dw_in", 2 * ch)
        self.dw_out = _DepthwiseConv(net, f"{name}.dw_out", ch)
        self.inject = _Linear(net, f"{name}.inject", prior_dim, ch, inject_init=True)

    def __call__(self, f: Tensor, z: Tensor) -> Tensor:
        n = f.shape[0]
        h = self.widen(self.norm(f))
        h = simple_gate(self.dw_in(h))
        pooled = global_avg_pool(h)
        h = h * pooled.reshape(n, self.ch, 1, 1)
        h = self.dw_out(h)
        inj = self.inject(z).reshape(n, self.ch, 1, 1)
        return h + inj + f

    def macs(self, h: int, w: int) -> int:
        return (
            self.widen.macs(h, w)
            + self.dw_in.macs(h, w)
            + self.dw_out.macs(h, w)
            + self.inject.macs()
        )


class FeedForwardBlock:
    """Gated convolutional feed-forward block with additive prior injection."""

    def __init__(self, net: Net, name: str, ch: int, prior_dim: int, expansion: int):
        self.ch = ch
        wide = expansion * ch
        self.norm = _LayerNorm(net, f"{name}.norm", ch)
        self.widen = _PointwiseConv(net, f"{name}.widen", ch, wide)
        self.dw_in = _DepthwiseConv(net, f"{name}.dw_in", wide)
        self.dw_out = _DepthwiseConv(net, f"{name}.dw_out", wide // 2)
        self.inject = _Linear(net, f"{name}.inject", prior_dim, ch, inject_init=True)

    def __call__(self, f: Tensor, z: Tensor) -> Tensor:
        n = f.shape[0]
        h = self.widen(self.norm(f))
        h = simple_gate(self.dw_in(h))
        h = self.dw_out(h)
        inj = self.inject(z).reshape(n, self.ch, 1, 1)
        return h + inj + f

    def macs(self, h: int, w: int) -> int:
        return (
            self.widen.macs(h, w)
            + self.dw_in.macs(h, w)
            + self.dw_out.macs(h, w)
            + self.inject.macs()
        )


class _ResBlock:
    def __init__(self, net: Net, name: str, ch: int):
        self.pw1 = _PointwiseConv(net, f"{name}.pw1", ch, ch)
        self.dw = _DepthwiseConv(net, f"{name}.dw", ch)
        self.pw2 = _PointwiseConv(net, f"{name}.pw2", ch, ch)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.pw2(silu(self.dw(self.pw1(x))))

    def macs(self, h: int, w: int) -> int:
        return self.pw1.macs(h, w) + self.dw.macs(h, w) + self.pw2.macs(h, w)


class _Downsample:
    """Halve spatial dims: space-to-depth then 1x1 mix (a 2x2 stride-2 conv)."""

    def __init__(self, net: Net, name: str, c_in: int, c_out: int):
        self.mix = _PointwiseConv(net, f"{name}.mix", 4 * c_in, c_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.mix(pixel_unshuffle(x, 2))

    def macs(self, h: int, w: int) -> int:
        return self.mix.macs(h // 2, w // 2)


class _Upsample:
    """Double spatial dims: 1x1 expand then depth-to-space."""

    def __init__(self, net: Net, name: str, c_in: int, c_out: int):
        self.expand = _PointwiseConv(net, f"{name}.expand", c_in, 4 * c_out)

    def __call__(self, x: Tensor) -> Tensor:
        return pixel_shuffle(self.expand(x), 2)

    def macs(self, h: int, w: int) -> int:
        return self.expand.macs(h, w)


def _rms_normalize(v: Tensor, eps: float = 1e-8) -> Tensor:
    """Scale each vector to unit root-mean-square componentwise magnitude.

    Fixing the prior's scale keeps the diffusion regression target
    commensurate with its standard-normal chain start; without it, joint
    pretraining drifts the extractor output toward zero (its scale trades off
    freely against the injection weights) and the denoiser's useful signal
    vanishes below its bulk output.
    """
    ms = (v * v).mean(axis=-1, keepdims=True) + eps
    inv = (ms.log() * -0.5).exp()
    return v * inv


class PriorExtractor(Net):
    """Conv+linear network producing the compact prior vector.

    The teacher variant sees the target and the degraded input stacked along
    channels; the condition variant sees the input alone. They share the same
    structure, differing only in the first convolution's input width. The
    output is RMS-normalized (see _rms_normalize).
    """

    def __init__(self, cfg: ModelConfig, n_images: int, prefix: str, rng: np.random.Generator):
        super().__init__(prefix, rng)
        self.cfg = cfg
        self.n_images = n_images
        r = cfg.unshuffle
        w = cfg.extractor_width
        in_ch = n_images * cfg.image_channels * r * r
        self.head = _PointwiseConv(self, "head", in_ch, w)
        self.block1 = _ResBlock(self, "block1", w)
        self.down1 = _Downsample(self, "down1", w, w)
        self.block2 = _ResBlock(self, "block2", w)
        self.down2 = _Downsample(self, "down2", w, w)
        self.block3 = _ResBlock(self, "block3", w)
        self.fc1 = _Linear(self, "fc1", w, w)
        self.fc2 = _Linear(self, "fc2", w, cfg.prior_dim)

    def forward(self, images: Tensor) -> Tensor:
        """images: [N, n_images * image_channels, H, W] -> [N, prior_dim]."""
        expected = self.n_images * self.cfg.image_channels
        if images.ndim != 4 or images.shape[1] != expected:
            raise DimensionError(
                f"extractor expects [N, {expected}, H, W], got {images.shape}"
            )
        x = pixel_unshuffle(images, self.cfg.unshuffle)
        x = self.head(x)
        x = self.down1(self.block1(x))
        x = self.down2(self.block2(x))
        x = self.block3(x)
        x = global_avg_pool(x)
        return _rms_normalize(self.fc2(silu(self.fc1(x))))

    def mac_count(self, image_hw: tuple[int, int]) -> int:
        r = self.cfg.unshuffle
        h, w = image_hw[0] // r, image_hw[1] // r
        total = self.head.macs(h, w) + self.block1.macs(h, w) + self.down1.macs(h, w)
        h, w = h // 2, w // 2
        total += self.block2.macs(h, w) + self.down2.macs(h, w)
        h, w = h // 2, w // 2
        total += self.block3.macs(h, w)
        return total + self.fc1.macs() + self.fc2.macs()


class NoisePredictor(Net):
    """Residual MLP estimating the noise in a prior sample at a given step,
    conditioned on the input-derived condition vector."""

    def __init__(self, cfg: ModelConfig, prefix: str, rng: np.random.Generator):
        super().__init__(prefix, rng)
        self.cfg = cfg
        d, hid = cfg.prior_dim, cfg.denoiser_width
        self.fc1 = _Linear(self, "fc1", 2 * d + 1, hid)
        self.fc2 = _Linear(self, "fc2", hid, hid)
        self.fc3 = _Linear(self, "fc3", hid, hid)
        self.fc4 = _Linear(self, "fc4", hid, d)

    def forward(self, z_t: Tensor, t: int, total_steps: int, cond: Tensor) -> Tensor:
        if not 1 <= t <= total_steps:
            raise ContractError(f"step index {t} outside [1, {total_steps}]")
        if z_t.shape != cond.shape or z_t.shape[-1] != self.cfg.prior_dim:
            raise DimensionError(
                f"denoiser expects matching [N, {self.cfg.prior_dim}] vectors, "
                f"got {z_t.shape} and {cond.shape}"
            )
        n = z_t.shape[0]
        t_feat = Tensor(np.full((n, 1), t / total_steps))
        x = concat([z_t, t_feat, cond], axis=1)
        h = silu(self.fc1(x))
        h = h + silu(self.fc2(h))
        h = h + silu(self.fc3(h))
        return self.fc4(h)

    def mac_count_per_step(self) -> int:
        return self.fc1.macs() + self.fc2.macs() + self.fc3.macs() + self.fc4.macs()


class GuidedDecoder(Net):
    """U-shaped stack of dynamic blocks, every one conditioned on the same
    prior vector; additive skip connections and a global input residual."""

    def __init__(self, cfg: ModelConfig, prefix: str, rng: np.random.Generator):
        super().__init__(prefix, rng)
        self.cfg = cfg
        d = cfg.prior_dim
        widths = [cfg.decoder_channels * (2 ** i) for i in range(cfg.levels)]
        self.widths = widths
        self.head = _PointwiseConv(self, "head", cfg.image_channels, widths[0])
        self.enc = []
        self.down = []
        for i in range(cfg.levels - 1):
            self.enc.append(
                (
                    AttentionBlock(self, f"enc{i}.att", widths[i], d),
                    FeedForwardBlock(self, f"enc{i}.ff", widths[i], d, cfg.expansion),
                )
            )
            self.down.append(_Downsample(self, f"down{i}", widths[i], widths[i + 1]))
        self.mid = (
            AttentionBlock(self, "mid.att", widths[-1], d),
            FeedForwardBlock(self, "mid.ff", widths[-1], d, cfg.expansion),
        )
        self.up = []
        self.dec = []
        for i in reversed(range(cfg.levels - 1)):
            self.up.append(_Upsample(self, f"up{i}", widths[i + 1], widths[i]))
            self.dec.append(
                (
                    AttentionBlock(self, f"dec{i}.att", widths[i], d),
                    FeedForwardBlock(self, f"dec{i}.ff", widths[i], d, cfg.expansion),
                )
            )
        self.tail = _PointwiseConv(self, "tail", widths[0], cfg.image_channels)

    def forward(self, image: Tensor, z: Tensor) -> Tensor:
        """image: [N, C, H, W]; z: [N, prior_dim] -> same-shape image."""
        if image.ndim != 4 or image.shape[1] != self.cfg.image_channels:
            raise DimensionError(
                f"decoder expects [N, {self.cfg.image_channels}, H, W], got {image.shape}"
            )
        div = 2 ** (self.cfg.levels - 1)
        if image.shape[2] % div or image.shape[3] % div:
            raise DimensionError(
                f"decoder input dims {image.shape[2:]} must be divisible by {div}"
            )
        x = self.head(image)
        skips = []
        for (att, ff), down in zip(self.enc, self.down):
            x = ff(att(x, z), z)
            skips.append(x)
            x = down(x)
        att, ff = self.mid
        x = ff(att(x, z), z)
        for up, (att, ff) in zip(self.up, self.dec):
            x = up(x)
            x = x + skips.pop()
            x = ff(att(x, z), z)
        return image + self.tail(x)

    def mac_count(self, image_hw: tuple[int, int]) -> int:
        h, w = image_hw
        total = self.head.macs(h, w) + self.tail.macs(h, w)
        hw = [(h // (2 ** i), w // (2 ** i)) for i in range(self.cfg.levels)]
        for i, ((att, ff), down) in enumerate(zip(self.enc, self.down)):
            total += att.macs(*hw[i]) + ff.macs(*hw[i]) + down.macs(*hw[i])
        att, ff = self.mid
        total += att.macs(*hw[-1]) + ff.macs(*hw[-1])
        for i, (up, (att, ff)) in enumerate(zip(self.up, self.dec)):
            lvl = self.cfg.levels - 2 - i
            total += up.macs(*hw[lvl + 1]) + att.macs(*hw[lvl]) + ff.macs(*hw[lvl])
        return total


@dataclass
class ModelBundle:
    """All parameter sets for one stage of the pipeline.

    Stage "s1" holds the teacher extractor and the decoder; stage "s2" adds
    the condition extractor and the noise predictor, with the decoder
    initialized from the trained stage-1 weights (identical parameter ids).
    """

    config: ModelConfig
    stage: str
    prior_net: PriorExtractor
    decoder: GuidedDecoder
    cond_net: PriorExtractor | None = None
    denoiser: NoisePredictor | None = None

    @staticmethod
    def new_stage1(cfg: ModelConfig, seed: int) -> "ModelBundle":
        cfg.validate()
        prior = PriorExtractor(cfg, 2, "prior_net", _stream(seed, 1))
        decoder = GuidedDecoder(cfg, "decoder", _stream(seed, 2))
        return ModelBundle(cfg, "s1", prior, decoder)

    @staticmethod
    def new_stage2(s1: "ModelBundle", seed: int) -> "ModelBundle":
        if s1.stage != "s1":
            raise ConfigError("stage-2 bundle must be initialized from a stage-1 bundle")
        cfg = s1.config
        prior = PriorExtractor(cfg, 2, "prior_net", _stream(seed, 1))
        prior.copy_params_from(s1.prior_net)
        prior.freeze()
        decoder = GuidedDecoder(cfg, "decoder", _stream(seed, 2))
        decoder.copy_params_from(s1.decoder)
        cond = PriorExtractor(cfg, 1, "cond_net", _stream(seed, 3))
        denoiser = NoisePredictor(cfg, "denoiser", _stream(seed, 4))
        return ModelBundle(cfg, "s2", prior, decoder, cond, denoiser)

    @staticmethod
    def empty(cfg: ModelConfig, stage: str) -> "ModelBundle":
        """Structure-only bundle (zero weights) for loading saved parameters."""
        bundle = ModelBundle.new_stage1(cfg, 0)
        if stage == "s2":
            bundle = ModelBundle.new_stage2(bundle, 0)
        for net in bundle.nets():
            net.zero_all_params()
        return bundle

    def nets(self) -> list[Net]:
        out: list[Net] = [self.prior_net, self.decoder]
        if self.cond_net is not None:
            out.append(self.cond_net)
        if self.denoiser is not None:
            out.append(self.denoiser)
        return out

    def params(self) -> list[Param]:
        out: list[Param] = []
        for net in self.nets():
            out.extend(net.params())
        return out

    def trainable_params(self) -> list[Param]:
        """Stage 1: extractor + decoder. Stage 2: everything but the frozen
        teacher extractor."""
        if self.stage == "s1":
            return self.prior_net.params() + self.decoder.params()
        return self.cond_net.params() + self.denoiser.params() + self.decoder.params()

    # -- forward helpers ------------------------------------------------------

    def extract_prior(self, gt: Tensor, inp: Tensor) -> Tensor:
        """Teacher path: prior from the stacked (target, input) pair."""
        if gt.shape != inp.shape:
            raise DimensionError(f"target/input shape mismatch: {gt.shape} vs {inp.shape}")
        return self.prior_net.forward(concat([gt, inp], axis=1))

    def extract_condition(self, inp: Tensor) -> Tensor:
        if self.cond_net is None:
            raise ConfigError("bundle has no condition extractor (stage s1)")
        return self.cond_net.forward(inp)

    def denoise(self, z_t: Tensor, t: int, total_steps: int, cond: Tensor) -> Tensor:
        if self.denoiser is None:
            raise ConfigError("bundle has no noise predictor (stage s1)")
        return self.denoiser.forward(z_t, t, total_steps, cond)

    def chain_denoiser(self, schedule):
        """Per-step noise estimator for the reverse chain: the analytic
        zero-prior default plus the learned correction. With untrained
        weights the chain contracts its Gaussian start to zero rather than
        amplifying it by 1 / sqrt(abar_T)."""
        from .diffusion import default_noise_scale

        def fn(z_t: Tensor, t: int, cond: Tensor) -> Tensor:
            correction = self.denoise(z_t, t, schedule.T, cond)
            return correction + z_t * default_noise_scale(schedule, t)

        return fn

    def decode(self, image: Tensor, z: Tensor) -> Tensor:
        return self.decoder.forward(image, z)


def _stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=(seed, tag))))


def mac_report(bundle: ModelBundle, image_hw: tuple[int, int], steps: int) -> dict:
    """Analytic multiply-accumulate counts (convolution and linear terms) for
    one sample. The chain entry covers all reverse steps of the noise
    predictor plus one condition extraction."""
    decoder = bundle.decoder.mac_count(image_hw)
    per_step = bundle.denoiser.mac_count_per_step() if bundle.denoiser else 0
    chain = steps * per_step
    report = {
        "decoder_macs": decoder,
        "denoiser_step_macs": per_step,
        "denoiser_chain_macs": chain,
        "chain_to_decoder_ratio": chain / decoder if decoder else 0.0,
        "prior_net_macs": bundle.prior_net.mac_count(image_hw),
    }
    if bundle.cond_net is not None:
        report["cond_net_macs"] = bundle.cond_net.mac_count(image_hw)
    return report
