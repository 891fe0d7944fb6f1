"""Synthetic periodic textures: stripes, checkerboards, brick grids."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PATTERNS = ("stripes", "checkerboard", "brick-grid")


@dataclass(frozen=True)
class TextureSpec:
    pattern: str = "mixed"
    period: tuple = (8, 16)  # pixels, inclusive integer range
    orientation: tuple = (0.0, 0.0)  # degrees
    noise: float = 0.0

    def __post_init__(self):
        if self.pattern not in PATTERNS + ("mixed",):
            raise ValueError(f"unknown pattern {self.pattern!r}")
        if self.period[0] < 2 or self.period[0] > self.period[1]:
            raise ValueError(f"bad period range {self.period}")


def render(pattern: str, size: int, period: float, angle_deg: float, phase: tuple, colors: np.ndarray, width: int = None) -> np.ndarray:
    """3 x H x W texture in [0, 1]; ``colors`` is 2 x 3."""
    H, W = size, width or size
    rows, cols = np.mgrid[0:H, 0:W].astype(np.float64)
    a = math.radians(angle_deg)
    u = cols * math.cos(a) + rows * math.sin(a) + phase[0]
    v = -cols * math.sin(a) + rows * math.cos(a) + phase[1]
    half = period / 2.0
    if pattern == "stripes":
        sel = np.floor(u / half) % 2
    elif pattern == "checkerboard":
        sel = (np.floor(u / half) + np.floor(v / half)) % 2
    elif pattern == "brick-grid":
        course = np.floor(v / half)
        shifted = u + (course % 2) * half
        mortar = max(1.0, period / 8.0)
        sel = ((v % half) < mortar) | ((shifted % period) < mortar)
        sel = sel.astype(np.float64)
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    img = colors[0][:, None, None] * (1 - sel) + colors[1][:, None, None] * sel
    return img


def sample_texture(rng: np.random.Generator, spec: TextureSpec, size: int) -> tuple:
    pattern = spec.pattern if spec.pattern != "mixed" else PATTERNS[int(rng.integers(len(PATTERNS)))]
    period = int(rng.integers(spec.period[0], spec.period[1] + 1))
    angle = float(rng.uniform(*spec.orientation))
    phase = (float(rng.uniform(0, period)), float(rng.uniform(0, period)))
    colors = rng.uniform(0, 1, size=(2, 3))
    img = render(pattern, size, period, angle, phase, colors)
    if spec.noise > 0:
        img = np.clip(img + rng.normal(0, spec.noise, img.shape), 0.0, 1.0)
    params = {"pattern": pattern, "period": period, "angle": angle, "phase": phase, "colors": colors.tolist()}
    return img, params


def synth_dataset(rng: np.random.Generator, spec: TextureSpec, count: int, size: int, stride: int = 8) -> tuple:
    """(N x 3 x size x size array, list of per-image parameter dicts)."""
    if size % stride:
        raise ValueError(f"size {size} not divisible by {stride}")
    images, params = [], []
    for _ in range(count):
        img, p = sample_texture(rng, spec, size)
        images.append(img)
        params.append(p)
    return np.stack(images) if images else np.zeros((0, 3, size, size)), params
