import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from acsl_lab.gradcheck import numeric_grad, relative_error
from acsl_lab.loss_core import (
    BACKGROUND,
    AcslConfig,
    InvalidInput,
    acsl_grad,
    acsl_loss,
    acsl_weights,
    bce_grad,
    bce_loss,
    masked_bce,
    sigmoid_probs,
)


def logit(p):
    return math.log(p / (1 - p))


# mask from the five-class illustration: positive A, D confused at 0.9
FIG3_PROBS = np.array([0.6, 0.2, 0.1, 0.9, 0.05])


class TestSigmoid:
    def test_zero(self):
        assert sigmoid_probs([0.0])[0] == 0.5

    def test_inverse_of_log_odds(self):
        np.testing.assert_allclose(sigmoid_probs([math.log(9)]), [0.9], rtol=1e-15)

    def test_against_mpmath(self):
        # 50-digit mpmath evaluation of 1/(1+e^-z)
        expected = [0.2141650169574413874, 0.59868766011245200037, 0.88079707797788244406]
        np.testing.assert_allclose(sigmoid_probs([-1.3, 0.4, 2.0]), expected, rtol=1e-15)

    def test_extremes_do_not_overflow(self):
        p = sigmoid_probs([-800.0, 800.0])
        assert p[0] == 0.0 and p[1] == 1.0

    @pytest.mark.parametrize("bad", [[np.nan], [np.inf, 0.0], [-np.inf]])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(InvalidInput):
            sigmoid_probs(bad)


class TestBce:
    def test_single_class(self):
        assert bce_loss([0.0], 0) == pytest.approx(0.6931471805599453, rel=1e-15)

    def test_two_classes(self):
        assert bce_loss([0.0, 0.0], 0) == pytest.approx(1.3862943611198906, rel=1e-15)

    def test_against_mpmath(self):
        z = [0.3, -1.2, 2.5, -0.7, 1.1]
        assert bce_loss(z, 1) == pytest.approx(6.6870488200999966351, rel=1e-13)

    def test_background_treats_every_class_as_negative(self):
        z = np.array([0.3, -1.2, 2.5])
        expected = sum(math.log1p(math.exp(v)) for v in z)
        assert bce_loss(z, BACKGROUND) == pytest.approx(expected, rel=1e-14)
        np.testing.assert_allclose(bce_grad(z, BACKGROUND), sigmoid_probs(z))

    def test_saturated_positive_has_zero_gradient(self):
        assert abs(bce_grad([30.0, 0.0], 0)[0]) < 1e-12

    def test_negative_gradient_is_probability(self):
        assert bce_grad([1.0, 0.0], 0)[1] == 0.5

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            z = rng.normal(0, 3, size=7)
            y = int(rng.integers(7))
            err = relative_error(bce_grad(z, y), numeric_grad(lambda v: bce_loss(v, y), z))
            assert err < 1e-5

    def test_large_logits_stay_finite(self):
        z = np.array([50.0, -50.0, 49.0, -49.5])
        for y in (0, 1, BACKGROUND):
            assert np.isfinite(bce_loss(z, y))
            assert np.all(np.isfinite(bce_grad(z, y)))

    def test_batch_matches_per_sample(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(6, 4))
        y = np.array([0, 3, BACKGROUND, 1, 2, BACKGROUND])
        batch = bce_loss(z, y)
        np.testing.assert_allclose(batch, [bce_loss(z[i], y[i]) for i in range(6)], rtol=1e-15)

    @pytest.mark.parametrize("label", [5, -2])
    def test_label_out_of_range(self, label):
        with pytest.raises(InvalidInput):
            bce_loss([0.0, 1.0], label)


class TestAcslWeights:
    def test_confused_class_is_kept(self):
        w = acsl_weights(FIG3_PROBS, 0, AcslConfig(0.7))
        np.testing.assert_array_equal(w, [1, 0, 0, 1, 0])

    def test_target_always_kept(self):
        probs = np.array([0.01, 0.02, 0.03])
        for k in range(3):
            assert acsl_weights(probs, k, AcslConfig(0.9))[k] == 1

    def test_zero_threshold_keeps_everything(self):
        np.testing.assert_array_equal(acsl_weights([0.001, 0.5, 1e-9], 1, AcslConfig(0.0)), [1, 1, 1])

    def test_tie_is_inclusive(self):
        assert acsl_weights([0.1, 0.7], 0, AcslConfig(0.7))[1] == 1

    def test_background_applies_threshold_everywhere(self):
        np.testing.assert_array_equal(acsl_weights([0.8, 0.2, 0.7], BACKGROUND, AcslConfig(0.7)), [1, 0, 1])

    def test_invalid_xi(self):
        with pytest.raises(InvalidInput):
            AcslConfig(1.5)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.integers(2, 10), elements=st.floats(0.001, 0.999)),
           st.floats(0.0, 1.0), st.randoms(use_true_random=False))
    def test_equivariant_under_relabeling(self, probs, xi, rnd):
        k = rnd.randrange(len(probs))
        perm = np.array(rnd.sample(range(len(probs)), len(probs)))
        cfg = AcslConfig(xi)
        w = acsl_weights(probs, k, cfg)
        w_perm = acsl_weights(probs[perm], int(np.flatnonzero(perm == k)[0]), cfg)
        np.testing.assert_array_equal(w_perm, w[perm])


class TestAcslLoss:
    def test_zero_threshold_is_bce(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            z = rng.normal(0, 4, size=6)
            y = int(rng.integers(-1, 6))
            assert acsl_loss(z, y, AcslConfig(0.0)) == bce_loss(z, y)
            np.testing.assert_array_equal(acsl_grad(z, y, AcslConfig(0.0)), bce_grad(z, y))

    def test_unit_threshold_keeps_only_positive(self):
        z = np.array([0.5, 3.0, -2.0, 10.0])
        assert acsl_loss(z, 2, AcslConfig(1.0)) == pytest.approx(-math.log(sigmoid_probs(z)[2]), rel=1e-14)

    def test_fig3_value(self):
        z = [logit(p) for p in FIG3_PROBS]
        # -log 0.6 - log(1 - 0.9), evaluated with mpmath
        assert acsl_loss(z, 0, AcslConfig(0.7)) == pytest.approx(2.8134107167600363672, rel=1e-12)

    def test_fig3_gradient(self):
        z = [logit(p) for p in FIG3_PROBS]
        g = acsl_grad(z, 0, AcslConfig(0.7))
        np.testing.assert_allclose(g, [0.6 - 1, 0, 0, 0.9, 0], atol=1e-15)

    def test_bounded_by_bce(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            z = rng.normal(0, 3, size=8)
            y = int(rng.integers(8))
            assert 0 <= acsl_loss(z, y, AcslConfig(rng.random())) <= bce_loss(z, y)

    def test_matches_finite_differences_away_from_threshold(self):
        rng = np.random.default_rng(4)
        checked = 0
        while checked < 50:
            z = rng.normal(0, 3, size=6)
            cfg = AcslConfig(float(rng.uniform(0.05, 0.95)))
            if np.any(np.abs(sigmoid_probs(z) - cfg.xi) <= 1e-3):
                continue
            y = int(rng.integers(6))
            err = relative_error(acsl_grad(z, y, cfg), numeric_grad(lambda v: acsl_loss(v, y, cfg), z))
            assert err < 1e-5
            checked += 1

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)),
           st.data())
    def test_gradient_entry_ranges(self, z, data):
        y = data.draw(st.integers(0, len(z) - 1))
        xi = data.draw(st.floats(0, 1))
        g = acsl_grad(z, y, AcslConfig(xi))
        w = acsl_weights(sigmoid_probs(z), y, AcslConfig(xi))
        assert -1 <= g[y] <= 0
        others = np.arange(len(z)) != y
        assert np.all(g[others & (w == 0)] == 0)
        assert np.all((g[others & (w == 1)] >= 0) & (g[others & (w == 1)] <= 1))
        assert np.isfinite(acsl_loss(z, y, AcslConfig(xi)))

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-20, 20)), st.data())
    def test_non_increasing_in_threshold(self, z, data):
        y = data.draw(st.integers(-1, len(z) - 1))
        losses = [acsl_loss(z, y, AcslConfig(xi)) for xi in np.linspace(0, 1, 21)]
        assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_masked_bce_weights_are_constant():
    z = np.array([0.2, -0.4, 1.5])
    w = np.array([1.0, 0.0, 0.5])
    loss, grad = masked_bce(z, 1, w)
    np.testing.assert_allclose(grad, w * (sigmoid_probs(z) - [0, 1, 0]))
    assert loss == pytest.approx(-(math.log(1 - sigmoid_probs(z)[0]) + 0.5 * math.log(1 - sigmoid_probs(z)[2])))
