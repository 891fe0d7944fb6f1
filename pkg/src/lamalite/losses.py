"""Training objectives: HRF perceptual, mask-aware adversarial, R1, feature matching."""

from __future__ import annotations

import contextlib
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .nn import Module
from .networks import PatchGeometry
from .tensor import Tensor

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    kappa: float = 10.0  # adversarial
    alpha: float = 30.0  # HRF perceptual
    beta: float = 100.0  # discriminator feature matching
    gamma: float = 0.001  # R1

    def __post_init__(self):
        if min(self.kappa, self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class LossReport:
    adv_g: float
    adv_d: float
    hrfpl: float
    discpl: float
    r1: float
    total_g: float
    total_d: float
    total: float

    CSV_FIELDS = ("step", "adv_g", "adv_d", "hrfpl", "discpl", "r1", "total_g", "total_d")

    def row(self, step: int) -> dict:
        d = asdict(self)
        d["step"] = step
        return {k: d[k] for k in self.CSV_FIELDS}


def two_stage_mean(terms: Sequence[Tensor]) -> Tensor:
    """Mean over layers of per-layer means."""
    if not terms:
        raise ValueError("need at least one layer")
    acc = T.mean(terms[0])
    for t in terms[1:]:
        acc = T.add(acc, T.mean(t))
    return T.mul(acc, 1.0 / len(terms))


def _sq_diffs(fa: Sequence[Tensor], fb: Sequence[Tensor]) -> list:
    if len(fa) != len(fb):
        raise ValueError("feature lists differ in length")
    out = []
    for a, b in zip(fa, fb):
        if a.shape != b.shape:
            raise ValueError(f"feature shapes differ: {a.shape} vs {b.shape}")
        d = T.sub(a, b)
        out.append(T.mul(d, d))
    return out


def hrf_perceptual_loss(x: Tensor, x_hat: Tensor, extractor: Callable) -> Tensor:
    if x.shape != x_hat.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {x_hat.shape}")
    return two_stage_mean(_sq_diffs(extractor(x), extractor(x_hat)))


@contextlib.contextmanager
def frozen(module: Module):
    """Treat ``module``'s parameters as constants (stop-gradient w.r.t. them)."""
    params = [p for p in module.parameters()]
    for p in params:
        p.requires_grad = False
    try:
        yield module
    finally:
        for p in params:
            p.requires_grad = True


# ---------------------------------------------------------------- mask-aware labels


def fake_cells(mask: np.ndarray, geometry: PatchGeometry, grid: tuple) -> np.ndarray:
    """B x 1 x h x w indicator: 1 where the cell's patch touches a missing pixel.

    ``mask`` is B x H x W (or B x 1 x H x W) with 1 = known.
    """
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 4:
        m = m[:, 0]
    B, H, W = m.shape
    h, w = grid
    missing = 1.0 - m
    integral = np.zeros((B, H + 1, W + 1))
    integral[:, 1:, 1:] = missing.cumsum(1).cumsum(2)
    rows = [geometry.footprint(i, H) for i in range(h)]
    cols = [geometry.footprint(j, W) for j in range(w)]
    r0, r1 = (np.array(v) for v in zip(*rows))
    c0, c1 = (np.array(v) for v in zip(*cols))
    count = (
        integral[:, r1[:, None], c1[None, :]]
        - integral[:, r0[:, None], c1[None, :]]
        - integral[:, r1[:, None], c0[None, :]]
        + integral[:, r0[:, None], c0[None, :]]
    )
    return (count > 0.5).astype(np.float64)[:, None]


@dataclass
class AdversarialTerms:
    l_d: Tensor
    l_g: Tensor
    n_fake: int
    degenerate: bool


def _log_prob(logits: Tensor) -> Tensor:
    return T.log(T.clip(T.sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS))


def _log_one_minus(logits: Tensor) -> Tensor:
    return T.log(T.clip(T.sub(1.0, T.sigmoid(logits)), PROB_EPS, 1.0 - PROB_EPS))


def discriminator_loss(real_logits: Tensor, fake_logits: Tensor, fake: np.ndarray) -> Tensor:
    """Non-saturating D loss; generated cells are real where ``fake`` is 0.

    Each expectation is a mean over all cells, so the two generated-image
    terms together average one label per cell.
    """
    known = 1.0 - fake
    real_term = T.neg(T.mean(_log_prob(real_logits)))
    known_term = T.neg(T.mean(T.mul(_log_prob(fake_logits), known)))
    fake_term = T.neg(T.mean(T.mul(_log_one_minus(fake_logits), fake)))
    return T.add(T.add(real_term, known_term), fake_term)


def generator_loss(fake_logits: Tensor) -> Tensor:
    return T.neg(T.mean(_log_prob(fake_logits)))


def adversarial_losses(x: Tensor, x_hat: Tensor, m: np.ndarray, disc) -> AdversarialTerms:
    """(L_D, L_G) with gradient stops: L_D sees a detached x_hat, L_G sees a frozen D."""
    real_logits = disc(T.stop_gradient(x))
    fake_logits_d = disc(T.stop_gradient(x_hat))
    fake = fake_cells(m, disc.geometry, fake_logits_d.shape[-2:])
    l_d = discriminator_loss(real_logits, fake_logits_d, fake)
    with frozen(disc):
        l_g = generator_loss(disc(x_hat))
    n_fake = int(fake.sum())
    return AdversarialTerms(l_d, l_g, n_fake, n_fake == 0)


def adversarial_objective(x: Tensor, x_hat: Tensor, m: np.ndarray, disc) -> Tensor:
    """sg_theta(L_D) + sg_xi(L_G): one scalar whose gradients split per network."""
    terms = adversarial_losses(x, x_hat, m, disc)
    return T.add(terms.l_d, terms.l_g)


def r1_penalty(disc: Callable, x) -> Tensor:
    """Batch mean of ||d(sum of logits)/d(input)||^2 on real images."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    xi = Tensor(data, requires_grad=True)
    logits = disc(xi)
    if not logits.requires_grad:
        return Tensor(0.0)
    (g,) = T.grad(T.tsum(logits), [xi], create_graph=True)
    return T.mul(T.tsum(T.mul(g, g)), 1.0 / data.shape[0])


def feature_matching_loss(x: Tensor, x_hat: Tensor, disc) -> Tensor:
    """Two-stage mean of squared D-feature differences; no gradient reaches D's weights."""
    with frozen(disc):
        _, real_feats = disc.features(T.stop_gradient(x))
        _, fake_feats = disc.features(x_hat)
    return two_stage_mean(_sq_diffs(real_feats, fake_feats))


def combine(adv: float, hrfpl: float, discpl: float, r1: float, w: LossWeights = LossWeights()) -> float:
    return w.kappa * adv + w.alpha * hrfpl + w.beta * discpl + w.gamma * r1


def total_loss(adv_g: float, adv_d: float, hrfpl: float, discpl: float, r1: float, w: LossWeights = LossWeights()) -> LossReport:
    vals = (adv_g, adv_d, hrfpl, discpl, r1)
    if not all(math.isfinite(v) for v in vals):
        raise T.NonFiniteError(f"non-finite loss component in {vals}")
    return LossReport(
        adv_g=adv_g,
        adv_d=adv_d,
        hrfpl=hrfpl,
        discpl=discpl,
        r1=r1,
        total_g=w.kappa * adv_g + w.alpha * hrfpl + w.beta * discpl,
        total_d=w.kappa * adv_d + w.gamma * r1,
        total=combine(adv_g + adv_d, hrfpl, discpl, r1, w),
    )
