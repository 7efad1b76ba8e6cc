import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from spoofbreak.errors import ConfigError, ShapeError
from spoofbreak.losses import (
    EPS,
    LossBreakdown,
    LossWeights,
    adversarial_loss_g,
    discriminator_loss,
    forensics_loss,
    perceptual_loss,
    total_generator_loss,
)


def clampf(p):
    return min(max(p, EPS), 1.0 - EPS)


def brute_perceptual(x, y):
    total = 0.0
    for b in range(x.shape[0]):
        for s in range(x.shape[-1]):
            total += abs(x[b, 0, s] - y[b, 0, s])
    return total / (x.shape[0] * x.shape[-1])


def brute_forensics(p):
    total = 0.0
    for m in range(p.shape[0]):
        for b in range(p.shape[1]):
            total -= math.log(clampf(p[m, b]))
    return total / p.size


def brute_adv(d, form):
    vals = [math.log(clampf(v)) if form == "non_saturating" else math.log(1.0 - clampf(v)) for v in d]
    s = sum(vals) / len(vals)
    return -s if form == "non_saturating" else s


def brute_disc(dr, da):
    return (-sum(math.log(clampf(v)) for v in dr) / len(dr)
            - sum(math.log(1.0 - clampf(v)) for v in da) / len(da))


def test_oracle_equivalence_random_batches():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.uniform(-1, 1, (16, 1, 64))
        y = rng.uniform(-1, 1, (16, 1, 64))
        p = rng.uniform(0, 1, (2, 16))
        d = rng.uniform(0, 1, 16)
        d2 = rng.uniform(0, 1, 16)
        assert abs(float(perceptual_loss(torch.from_numpy(x), torch.from_numpy(y))) - brute_perceptual(x, y)) <= 1e-6
        assert abs(float(forensics_loss(torch.from_numpy(p))) - brute_forensics(p)) <= 1e-6
        for form in ("non_saturating", "paper"):
            assert abs(float(adversarial_loss_g(torch.from_numpy(d), form)) - brute_adv(d, form)) <= 1e-6
        assert abs(float(discriminator_loss(torch.from_numpy(d), torch.from_numpy(d2))) - brute_disc(d, d2)) <= 1e-6


def test_perceptual_examples():
    assert float(perceptual_loss(np.ones((2, 1, 3)), np.ones((2, 1, 3)))) == 0.0
    assert float(perceptual_loss(np.ones((2, 1, 3)), np.zeros((2, 1, 3)))) == 1.0
    assert float(perceptual_loss(np.array([[[0.5, -0.5]]]), np.zeros((1, 1, 2)))) == pytest.approx(0.5)


def test_perceptual_shape_mismatch():
    with pytest.raises(ShapeError):
        perceptual_loss(np.zeros((2, 1, 4)), np.zeros((2, 1, 5)))


def test_forensics_examples():
    assert float(forensics_loss(np.ones((2, 4)))) == pytest.approx(-math.log(1 - EPS), rel=1e-6)
    assert float(forensics_loss(np.full((2, 4), math.exp(-1)))) == pytest.approx(1.0, abs=1e-12)
    assert float(forensics_loss(np.zeros((1, 1)))) == pytest.approx(16.118, abs=1e-3)


def test_adversarial_examples():
    assert float(adversarial_loss_g(np.full(8, 1 - EPS))) == pytest.approx(1e-7, rel=1e-3)
    assert float(adversarial_loss_g(np.full(8, math.exp(-1)))) == pytest.approx(1.0, abs=1e-12)
    assert float(adversarial_loss_g(np.full(8, 0.5), "paper")) == pytest.approx(math.log(0.5), abs=1e-12)


def test_adversarial_unknown_form():
    with pytest.raises(ConfigError):
        adversarial_loss_g(np.full(4, 0.5), "hinge")


def test_discriminator_examples():
    assert float(discriminator_loss(np.full(4, 1 - EPS), np.full(4, EPS))) == pytest.approx(2e-7, rel=1e-3)
    e = math.exp(-1)
    assert float(discriminator_loss(np.full(4, e), np.full(4, 1 - e))) == pytest.approx(2.0, abs=1e-12)
    assert float(discriminator_loss(np.full(4, 0.5), np.full(4, 0.5))) == pytest.approx(2 * math.log(2), abs=1e-12)


def test_boundary_probabilities_stay_finite():
    p = torch.tensor([0.0, 1.0], dtype=torch.float64, requires_grad=True)
    loss = forensics_loss(p) + adversarial_loss_g(p) + adversarial_loss_g(p, "paper") + discriminator_loss(p, p)
    loss.backward()
    assert torch.isfinite(loss)
    assert torch.isfinite(p.grad).all()


def test_total_examples_and_weights():
    assert total_generator_loss((1.0, 2.0, 3.0, 4.0), LossWeights(0, 0, 0, 0)) == 0
    assert total_generator_loss({"perceptual": 0.5, "forensics": 9.0, "transcription": 9.0, "adversarial": 9.0},
                                LossWeights(1, 0, 0, 0)) == 0.5
    assert LossWeights().lambda2 == 1e-4


@pytest.mark.parametrize("bad", [-1.0, float("nan"), float("inf")])
def test_weights_reject_bad_values(bad):
    with pytest.raises(ConfigError) as exc:
        LossWeights(lambda1=bad)
    assert exc.value.path == "losses.lambda1"


def test_breakdown_finiteness():
    assert LossBreakdown(0, 0, 0, 0, 0, 0).is_finite()
    assert not LossBreakdown(0, float("nan"), 0, 0, 0).is_finite()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.lists(st.floats(-1, 1), min_size=3, max_size=3),
       st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_perceptual_triangle_inequality(a, b, c):
    x, y, z = (np.array(v).reshape(1, 1, 3) for v in (a, b, c))
    assert float(perceptual_loss(x, z)) <= float(perceptual_loss(x, y)) + float(perceptual_loss(y, z)) + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=4, max_size=4), st.lists(st.floats(0, 10), min_size=4, max_size=4),
       st.floats(0, 10))
def test_total_is_linear_in_each_weight(terms, lam, scale):
    for i in range(4):
        w1 = list(lam)
        w2 = list(lam)
        w2[i] = lam[i] * scale
        t1 = total_generator_loss(terms, LossWeights(*w1))
        t2 = total_generator_loss(terms, LossWeights(*w2))
        assert t2 - t1 == pytest.approx((scale - 1) * lam[i] * terms[i], abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=8))
def test_loss_signs(ps):
    p = np.array(ps)
    assert float(forensics_loss(p)) >= 0
    assert float(adversarial_loss_g(p)) >= 0
    saturating = float(adversarial_loss_g(p, "paper"))
    # 1 - (1 - EPS) loses ~1e-9 relative precision to cancellation
    assert math.log(EPS) - 1e-8 <= saturating <= 0
