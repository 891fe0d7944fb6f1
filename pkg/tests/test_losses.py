import math

import numpy as np
import pytest

from lamalite import tensor as T
from lamalite.losses import (
    LossReport,
    LossWeights,
    adversarial_losses,
    adversarial_objective,
    combine,
    discriminator_loss,
    fake_cells,
    feature_matching_loss,
    generator_loss,
    hrf_perceptual_loss,
    r1_penalty,
    total_loss,
    two_stage_mean,
)
from lamalite.networks import Discriminator, DiscriminatorConfig, HrfExtractor, PatchGeometry
from lamalite.nn import Conv2d
from lamalite.tensor import Tensor
from oracles import central_difference, rel_error

LN2 = math.log(2.0)


@pytest.fixture
def disc(rng):
    return Discriminator(DiscriminatorConfig(n_layers=3, base_width=4), rng)


def _mask(rng, B=2, S=32):
    m = np.ones((B, 1, S, S))
    m[:, :, 8:20, 5:14] = 0
    return m


# ---------------------------------------------------------------- HRF perceptual


def test_hrfpl_zero_on_identical(rng):
    x = Tensor(rng.random((2, 3, 32, 32)))
    assert hrf_perceptual_loss(x, x, HrfExtractor()).item() == 0.0


def test_two_stage_mean_arithmetic():
    a = Tensor(np.full((2, 3), 2.0))
    b = Tensor(np.full((7,), 4.0))
    assert two_stage_mean([a, b]).item() == 3.0


def test_hrfpl_nonnegative_and_symmetric(rng):
    ext = HrfExtractor()
    for _ in range(3):
        x, y = (Tensor(rng.random((1, 3, 32, 32))) for _ in range(2))
        a, b = hrf_perceptual_loss(x, y, ext).item(), hrf_perceptual_loss(y, x, ext).item()
        assert a >= 0 and a == b


def test_hrfpl_shape_mismatch(rng):
    with pytest.raises(ValueError):
        hrf_perceptual_loss(Tensor(np.zeros((1, 3, 32, 32))), Tensor(np.zeros((1, 3, 16, 16))), HrfExtractor())


# ---------------------------------------------------------------- labels


def _brute_fake(mask, size, jump, start, grid):
    B, _, H, W = mask.shape
    h, w = grid
    out = np.zeros((B, 1, h, w))
    for b in range(B):
        for i in range(h):
            for j in range(w):
                hit = False
                for r in range(start + i * jump, start + i * jump + size):
                    for c in range(start + j * jump, start + j * jump + size):
                        if 0 <= r < H and 0 <= c < W and mask[b, 0, r, c] == 0:
                            hit = True
                out[b, 0, i, j] = hit
    return out


def test_fake_cells_match_brute_force(rng):
    geo = PatchGeometry(size=11, jump=4, start=-5)
    for _ in range(10):
        mask = (rng.random((2, 1, 24, 24)) > 0.02).astype(float)
        assert np.array_equal(fake_cells(mask, geo, (6, 6)), _brute_fake(mask, 11, 4, -5, (6, 6)))


def test_fake_cells_empty_hole():
    geo = PatchGeometry(31, 8, -15)
    assert fake_cells(np.ones((1, 32, 32)), geo, (4, 4)).sum() == 0


# ---------------------------------------------------------------- adversarial


def test_half_discriminator_constants(rng):
    zeros = Tensor(np.zeros((2, 1, 4, 4)))
    fake = (rng.random((2, 1, 4, 4)) < 0.4).astype(float)
    assert abs(discriminator_loss(zeros, zeros, fake).item() - 2 * LN2) <= 1e-12
    assert abs(generator_loss(zeros).item() - LN2) <= 1e-12


def test_perfect_discriminator_limits(rng):
    fake = np.zeros((1, 1, 4, 4))
    fake[..., :2, :] = 1
    big = 40.0
    real = Tensor(np.full((1, 1, 4, 4), big))
    gen = Tensor(np.where(fake == 1, -big, big))
    assert discriminator_loss(real, gen, fake).item() < 1e-6
    lg = generator_loss(Tensor(np.full((1, 1, 4, 4), -big))).item()
    assert lg == pytest.approx(-math.log(1e-7), rel=1e-6)  # clamped, finite


def test_losses_nonnegative(rng):
    for _ in range(5):
        a, b = (Tensor(rng.normal(size=(2, 1, 4, 4)) * 5) for _ in range(2))
        fake = (rng.random((2, 1, 4, 4)) < 0.5).astype(float)
        assert discriminator_loss(a, b, fake).item() >= 0
        assert generator_loss(b).item() >= 0


def test_empty_mask_flagged(rng, disc):
    x = Tensor(rng.random((1, 3, 32, 32)))
    terms = adversarial_losses(x, x, np.ones((1, 1, 32, 32)), disc)
    assert terms.degenerate and terms.n_fake == 0


def test_stop_gradient_split(rng, disc):
    gen = Conv2d(4, 3, 3, rng)
    x = Tensor(rng.random((2, 3, 32, 32)))
    m = _mask(rng)

    def make():
        return T.sigmoid(gen(Tensor(np.concatenate([x.data * m, m], axis=1))))

    gp, dp = gen.parameters(), disc.parameters()
    x_hat = make()
    combined = T.grad(adversarial_objective(x, x_hat, m, disc), gp + dp)

    x_hat = make()
    lg = generator_loss(disc(x_hat))
    only_g = T.grad(lg, gp)
    with T.no_grad():
        x_hat_const = make()
    fake = fake_cells(m, disc.geometry, (4, 4))
    ld = discriminator_loss(disc(x), disc(x_hat_const), fake)
    only_d = T.grad(ld, dp)

    for a, b in zip(combined[: len(gp)], only_g):
        assert np.abs(a.data - b.data).max() <= 1e-12 * max(1.0, np.abs(b.data).max())
    for a, b in zip(combined[len(gp) :], only_d):
        assert np.abs(a.data - b.data).max() <= 1e-12 * max(1.0, np.abs(b.data).max())


# ---------------------------------------------------------------- R1


def test_r1_constant_discriminator(rng):
    x = rng.random((2, 3, 8, 8))
    assert r1_penalty(lambda t: Tensor(np.zeros((2, 1, 1, 1))), x).item() == 0.0
    assert r1_penalty(lambda t: T.mul(t, 0.0), x).item() == 0.0


def test_r1_linear_discriminator(rng):
    w = rng.normal(size=(1, 3, 8, 8))
    x = rng.random((3, 3, 8, 8))
    r1 = r1_penalty(lambda t: T.tsum(T.mul(t, w), axis=(1, 2, 3)), x).item()
    assert abs(r1 - (w**2).sum()) <= 1e-10


def test_r1_matches_finite_difference(rng, disc):
    x0 = rng.random((2, 3, 16, 16))
    r1 = r1_penalty(disc, x0).item()
    g = central_difference(lambda v: T.tsum(disc(Tensor(v))).item(), x0)
    assert abs(r1 - (g**2).sum() / 2) <= 1e-5 * max(1.0, r1)


def test_r1_parameter_gradient_finite_difference(rng):
    d = Discriminator(DiscriminatorConfig(n_layers=2, base_width=2, final_kernel=1), rng)
    x0 = rng.random((1, 3, 8, 8))
    w = d.convs[0].weight
    w.grad = None
    r1_penalty(d, x0).backward()
    base = w.data.copy()

    def f(v):
        w.data = v
        out = r1_penalty(d, x0).item()
        w.data = base
        return out

    assert rel_error(w.grad, central_difference(f, base)) <= 1e-6


# ---------------------------------------------------------------- feature matching


def test_feature_matching_zero_and_nonnegative(rng, disc):
    x = Tensor(rng.random((1, 3, 32, 32)))
    assert feature_matching_loss(x, x, disc).item() == 0.0
    y = Tensor(rng.random((1, 3, 32, 32)))
    assert feature_matching_loss(x, y, disc).item() > 0


def test_feature_matching_gradient_only_to_generator(rng, disc):
    x = Tensor(rng.random((1, 3, 32, 32)))
    y = Tensor(rng.random((1, 3, 32, 32)), requires_grad=True)
    for p in disc.parameters():
        p.grad = None
    feature_matching_loss(x, y, disc).backward()
    assert y.grad is not None and np.abs(y.grad).sum() > 0
    for p in disc.parameters():
        assert p.grad is None or not np.any(p.grad)
    assert all(p.requires_grad for p in disc.parameters())


# ---------------------------------------------------------------- weighting


def test_default_weights():
    w = LossWeights()
    assert (w.kappa, w.alpha, w.beta, w.gamma) == (10, 30, 100, 0.001)


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        LossWeights(alpha=-1)


def test_unit_components_total():
    # 10 + 30 + 100 + 0.001
    assert combine(1, 1, 1, 1) == pytest.approx(140.001, abs=1e-12)
    assert combine(0, 0, 0, 0) == 0


def test_total_loss_split():
    rep = total_loss(0.5, 0.25, 1.0, 2.0, 3.0)
    assert rep.total_g == 10 * 0.5 + 30 * 1.0 + 100 * 2.0
    assert rep.total_d == 10 * 0.25 + 0.001 * 3.0
    assert rep.total == combine(0.75, 1.0, 2.0, 3.0)
    assert list(rep.row(7)) == list(LossReport.CSV_FIELDS)


def test_nan_component_aborts():
    with pytest.raises(T.NonFiniteError):
        total_loss(float("nan"), 0, 0, 0, 0)
