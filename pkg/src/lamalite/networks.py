"""Inpainting generator, patch discriminator and the frozen high-receptive-field extractor."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .ffc import FfcConfig, FfcLayer
from .nn import BatchNorm2d, Conv2d, Module
from .tensor import Tensor


def stack_input(x: Tensor, m) -> Tensor:
    """[x * m, m] along channels; m = 1 marks known pixels."""
    m = T.as_tensor(m)
    if m.ndim == 3:
        m = T.reshape(m, (m.shape[0], 1) + m.shape[1:])
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected B x 3 x H x W image, got {x.shape}")
    if m.shape != (x.shape[0], 1) + x.shape[2:]:
        raise ValueError(f"mask shape {m.shape} does not match image {x.shape}")
    return T.concat([T.mul(x, m), m], axis=1)


# ---------------------------------------------------------------- generator


@dataclass(frozen=True)
class GeneratorConfig:
    base_width: int = 64
    n_residual: int = 9
    ffc: bool = True
    ffc_ratio: float = 0.5
    trunk_width: Optional[int] = None
    input_kernel: int = 7
    n_down: int = 3
    n_up: int = 3

    def __post_init__(self):
        if self.n_down != self.n_up:
            raise ValueError("n_down must equal n_up")
        if self.n_residual < 1:
            raise ValueError("need at least one residual block")

    @property
    def widths(self) -> list:
        w = [self.base_width * 2**i for i in range(self.n_down + 1)]
        if self.trunk_width is not None:
            w[-1] = self.trunk_width
        return w

    @property
    def stride_product(self) -> int:
        return 2**self.n_down

    def block_config(self, activation: bool) -> FfcConfig:
        c = self.widths[-1]
        ratio = self.ffc_ratio if self.ffc else 0.0
        return FfcConfig(c, c, ratio, ratio, spectral=self.ffc, activation=activation)

    def parameter_count(self) -> int:
        w = self.widths
        k = self.input_kernel
        n = 4 * w[0] * k * k + 2 * w[0]  # input conv (no bias) + BN
        for a, b in zip(w[:-1], w[1:]):
            n += a * b * 9 + 2 * b
        n += 2 * self.n_residual * self.block_config(True).parameter_count()
        rev = w[::-1]
        for a, b in zip(rev[:-1], rev[1:]):
            n += a * b * 9 + 2 * b
        return n + w[0] * 3 * k * k + 3


class ResidualBlock(Module):
    """x + FFC_bn(FFC_bn_relu(x))."""

    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator):
        self.first = FfcLayer(cfg.block_config(activation=True), rng)
        self.second = FfcLayer(cfg.block_config(activation=False), rng)

    def forward(self, x: Tensor) -> Tensor:
        return T.add(x, self.second(self.first(x)))


class Generator(Module):
    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator):
        self.cfg = cfg
        w = cfg.widths
        self.inp = Conv2d(4, w[0], cfg.input_kernel, rng, bias=False)
        self.inp_bn = BatchNorm2d(w[0])
        self.down = [Conv2d(a, b, 3, rng, stride=2, bias=False) for a, b in zip(w[:-1], w[1:])]
        self.down_bn = [BatchNorm2d(b) for b in w[1:]]
        self.blocks = [ResidualBlock(cfg, rng) for _ in range(cfg.n_residual)]
        rev = w[::-1]
        self.up = [Conv2d(a, b, 3, rng, bias=False) for a, b in zip(rev[:-1], rev[1:])]
        self.up_bn = [BatchNorm2d(b) for b in rev[1:]]
        self.out = Conv2d(w[0], 3, cfg.input_kernel, rng, gain=1.0)

    def forward(self, x4: Tensor) -> Tensor:
        return generator_forward(x4, self)


def generator_forward(x4: Tensor, g: Generator, logits: bool = False) -> Tensor:
    """Image in [0, 1]; ``logits`` skips the final sigmoid (useful for gradient probes)."""
    B, C, H, W = x4.shape
    s = g.cfg.stride_product
    if C != 4:
        raise ValueError(f"generator expects 4 input channels, got {C}")
    if H % s or W % s:
        raise ValueError(f"spatial size {H}x{W} not divisible by {s}")
    h = T.relu(g.inp_bn(g.inp(x4)))
    for conv, bn in zip(g.down, g.down_bn):
        h = T.relu(bn(conv(h)))
    for block in g.blocks:
        h = block(h)
    for conv, bn in zip(g.up, g.up_bn):
        h = T.relu(bn(conv(T.upsample_nearest(h, 2))))
    y = g.out(h)
    return y if logits else T.sigmoid(y)


# ---------------------------------------------------------------- discriminator


@dataclass(frozen=True)
class DiscriminatorConfig:
    n_layers: int = 4
    base_width: int = 64
    kernel_size: int = 3
    final_kernel: int = 3
    slope: float = 0.2

    @property
    def widths(self) -> list:
        return [self.base_width * 2**i for i in range(self.n_layers)]

    def layer_specs(self) -> list:
        """(kernel, stride, pad) for every conv in order."""
        k, kf = self.kernel_size, self.final_kernel
        return [(k, 2, (k - 1) // 2)] * self.n_layers + [(kf, 1, (kf - 1) // 2)]


@dataclass(frozen=True)
class PatchGeometry:
    """Cell i covers input rows [start + i*jump, start + i*jump + size)."""

    size: int
    jump: int
    start: int

    def footprint(self, i: int, n: int) -> tuple:
        lo = self.start + i * self.jump
        return max(lo, 0), min(lo + self.size, n)


def patch_geometry(cfg: DiscriminatorConfig) -> PatchGeometry:
    size, jump, start = 1, 1, 0
    for k, s, p in cfg.layer_specs():
        size += (k - 1) * jump
        start -= p * jump
        jump *= s
    return PatchGeometry(size, jump, start)


class Discriminator(Module):
    def __init__(self, cfg: DiscriminatorConfig, rng: np.random.Generator):
        self.cfg = cfg
        widths = cfg.widths
        ins = [3] + widths[:-1]
        self.convs = [Conv2d(a, b, cfg.kernel_size, rng, stride=2) for a, b in zip(ins, widths)]
        self.head = Conv2d(widths[-1], 1, cfg.final_kernel, rng, gain=1.0)

    @property
    def min_size(self) -> int:
        # reflect padding of the head needs at least a 2x2 map
        return 2 ** (self.cfg.n_layers + (self.cfg.final_kernel > 1))

    @property
    def geometry(self) -> PatchGeometry:
        return patch_geometry(self.cfg)

    def forward(self, img: Tensor) -> Tensor:
        return discriminator_forward(img, self)[0]

    def features(self, img: Tensor) -> tuple:
        return discriminator_forward(img, self)


def discriminator_forward(img: Tensor, d: Discriminator) -> tuple:
    """Return (logit map B x 1 x h x w, activations after each nonlinearity)."""
    n = min(img.shape[-2:])
    if n < d.min_size:
        raise ValueError(f"image {img.shape[-2:]} smaller than one discriminator patch")
    feats = []
    h = img
    for conv in d.convs:
        h = T.leaky_relu(conv(h), d.cfg.slope)
        feats.append(h)
    return d.head(h), feats


# ---------------------------------------------------------------- HRF extractor


@dataclass(frozen=True)
class HrfExtractorConfig:
    widths: tuple = (16, 16, 16, 16)
    dilations: tuple = (1, 2, 4, 8)
    kernel_size: int = 3
    seed: int = 1234

    def receptive_field(self) -> int:
        return 1 + sum((self.kernel_size - 1) * d for d in self.dilations)


class HrfExtractor(Module):
    """Frozen, randomly initialized dilated-conv stack; taps after every ReLU."""

    def __init__(self, cfg: HrfExtractorConfig = HrfExtractorConfig()):
        if len(cfg.widths) != len(cfg.dilations):
            raise ValueError("widths and dilations must have equal length")
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        ins = (3,) + tuple(cfg.widths[:-1])
        self.convs = [
            Conv2d(a, b, cfg.kernel_size, rng, dilation=d, bias=False)
            for a, b, d in zip(ins, cfg.widths, cfg.dilations)
        ]
        self.freeze()

    def forward(self, img: Tensor) -> list:
        return hrf_features(img, self)


def hrf_features(img: Tensor, extractor: HrfExtractor) -> list:
    feats = []
    h = img
    for conv in extractor.convs:
        h = T.relu(conv(h))
        feats.append(h)
    return feats
