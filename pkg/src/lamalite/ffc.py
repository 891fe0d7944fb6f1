"""Fast Fourier convolution: a local spatial branch plus a global spectral branch."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .nn import BatchNorm2d, Conv2d, Module
from .tensor import Tensor


@dataclass(frozen=True)
class FfcConfig:
    in_channels: int
    out_channels: int
    global_ratio_in: float = 0.5
    global_ratio_out: float = 0.5
    kernel_size: int = 3
    spectral: bool = True
    activation: bool = True
    padding: str = "reflect"

    def __post_init__(self):
        for r in (self.global_ratio_in, self.global_ratio_out):
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"global ratio {r} outside [0, 1]")

    @property
    def global_in(self) -> int:
        return int(round(self.global_ratio_in * self.in_channels))

    @property
    def local_in(self) -> int:
        return self.in_channels - self.global_in

    @property
    def global_out(self) -> int:
        return int(round(self.global_ratio_out * self.out_channels))

    @property
    def local_out(self) -> int:
        return self.out_channels - self.global_out

    def parameter_count(self) -> int:
        """Closed-form tally of trainable weights in an :class:`FfcLayer`."""
        k2 = self.kernel_size**2
        li, gi, lo, go = self.local_in, self.global_in, self.local_out, self.global_out
        n = k2 * (li * lo + li * go + gi * lo)
        if gi and go:
            # spectral: 1x1 conv over 2*gi -> 2*go frequency channels, BN on 2*go
            n += 4 * gi * go + 4 * go if self.spectral else k2 * gi * go
        return n + 2 * lo + 2 * go


class SpectralTransform(Module):
    """rfft2 -> [re; im] channels -> 1x1 conv -> BN -> ReLU -> split -> irfft2."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, use_bn: bool = True, use_relu: bool = True):
        self.conv = Conv2d(2 * in_channels, 2 * out_channels, 1, rng, bias=False)
        self.bn = BatchNorm2d(2 * out_channels) if use_bn else None
        self.use_relu = use_relu

    def set_identity(self) -> "SpectralTransform":
        c_out, c_in = self.conv.weight.shape[:2]
        if c_out != c_in:
            raise ValueError("identity needs equal in/out channels")
        self.conv.weight.data = np.eye(c_in).reshape(c_in, c_in, 1, 1)
        return self

    def frequency_features(self, x: Tensor) -> Tensor:
        """The real B x 2C x H x (W//2+1) tensor the 1x1 conv acts on."""
        return T.rfft2(x)

    def forward(self, x: Tensor) -> Tensor:
        return spectral_transform(x, self)


def spectral_transform(x: Tensor, w: SpectralTransform) -> Tensor:
    if x.shape[1] < 1:
        raise ValueError("spectral transform needs at least one channel")
    height, width = x.shape[-2:]
    # orthonormal scaling keeps spectral magnitudes comparable across resolutions
    scale = math.sqrt(height * width)
    f = w.conv(T.mul(T.rfft2(x), 1.0 / scale))
    if w.bn is not None:
        f = w.bn(f)
    if w.use_relu:
        f = T.relu(f)
    return T.mul(T.irfft2(f, width), scale)


class FfcLayer(Module):
    """Four-path FFC: l->l, l->g, g->l are spatial convs, g->g is spectral.

    Per destination branch the two incoming paths are summed, then BN and
    (optionally) ReLU; the result is [local; global] along channels.
    """

    def __init__(self, cfg: FfcConfig, rng: np.random.Generator):
        self.cfg = cfg
        li, gi, lo, go = cfg.local_in, cfg.global_in, cfg.local_out, cfg.global_out
        k, pad = cfg.kernel_size, cfg.padding

        def conv(cin, cout):
            return Conv2d(cin, cout, k, rng, padding=pad, bias=False) if cin and cout else None

        self.l2l = conv(li, lo)
        self.l2g = conv(li, go)
        self.g2l = conv(gi, lo)
        if gi and go:
            self.g2g = SpectralTransform(gi, go, rng) if cfg.spectral else conv(gi, go)
        else:
            self.g2g = None
        self.bn_l = BatchNorm2d(lo) if lo else None
        self.bn_g = BatchNorm2d(go) if go else None

    def forward(self, x: Tensor) -> Tensor:
        return ffc_forward(x, self)


def _sum_paths(*ys: Optional[Tensor]) -> Optional[Tensor]:
    ys = [y for y in ys if y is not None]
    if not ys:
        return None
    out = ys[0]
    for y in ys[1:]:
        out = T.add(out, y)
    return out


def ffc_forward(x: Tensor, layer: FfcLayer) -> Tensor:
    cfg = layer.cfg
    if x.shape[1] != cfg.in_channels:
        raise ValueError(f"FFC layer expects {cfg.in_channels} channels, got {x.shape[1]}")
    x_l, x_g = T.split(x, [cfg.local_in, cfg.global_in], axis=1)

    def path(mod, inp):
        return mod(inp) if mod is not None else None

    outs = []
    for y, bn in (
        (_sum_paths(path(layer.l2l, x_l), path(layer.g2l, x_g)), layer.bn_l),
        (_sum_paths(path(layer.l2g, x_l), path(layer.g2g, x_g)), layer.bn_g),
    ):
        if bn is None:
            continue
        if y is None:
            raise ValueError("output branch has no incoming path")
        y = bn(y)
        outs.append(T.relu(y) if cfg.activation else y)
    return T.concat(outs, axis=1)
