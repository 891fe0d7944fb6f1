"""In-hole reconstruction metrics, compositing and the effective receptive field probe."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import Tensor

PSNR_CAP = 99.0
FOOTPRINT_EPS = 1e-12


@dataclass
class EvalReport:
    l1: float
    l2: float
    psnr: float
    n_missing: int
    per_resolution: dict = field(default_factory=dict)


def _hole(m: np.ndarray, shape: tuple) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim == len(shape) - 1:
        m = m[:, None] if m.ndim == 3 else m[None]
    return np.broadcast_to(m == 0, shape)


def inpaint_metrics(x: np.ndarray, x_hat: np.ndarray, m: np.ndarray) -> EvalReport:
    """L1, MSE and PSNR over missing pixels (m == 0), all channels."""
    x, x_hat = np.asarray(x, dtype=np.float64), np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    hole = _hole(m, x.shape)
    n = int(hole.sum())
    if n == 0:
        raise ValueError("mask has no missing pixels")
    diff = (x - x_hat)[hole]
    l1 = float(np.abs(diff).mean())
    l2 = float((diff**2).mean())
    psnr = PSNR_CAP if l2 == 0 else min(PSNR_CAP, 10.0 * np.log10(1.0 / l2))
    return EvalReport(l1, l2, psnr, n)


def composite(x: np.ndarray, x_hat: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Known pixels from ``x``, missing ones from ``x_hat``."""
    known = ~_hole(m, np.shape(x))
    return np.where(known, x, x_hat)


@dataclass
class ErfResult:
    sensitivity: np.ndarray  # H x W
    footprint: int
    fraction: float


def erf_probe(model: Callable, x, position: tuple) -> ErfResult:
    """|d out[:, :, i, j] / d input| summed over channels (batch item 0)."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if data.ndim == 3:
        data = data[None]
    xi = Tensor(data[:1], requires_grad=True)
    was_training = getattr(model, "training", None)
    if was_training is not None:
        model.eval()  # batch statistics would couple every pixel
    try:
        out = model(xi)
    finally:
        if was_training is not None:
            model.train(was_training)
    i, j = position
    picked = T.narrow(T.narrow(out, 2, i, i + 1), 3, j, j + 1)
    (g,) = T.grad(T.tsum(picked), [xi])
    sens = np.abs(g.data[0]).sum(axis=0)
    footprint = int((sens > FOOTPRINT_EPS).sum())
    return ErfResult(sens, footprint, footprint / sens.size)
