import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aiscv.ce_update import (WeightedSample, ce_objective, fit_weighted_gmm, gaussian_ce_update,
                             gaussian_fit, mixture_ce_update)
from aiscv.densities import GaussianDensity, MixtureDensity, normal
from aiscv.errors import SingularCovariance, UnreachableTarget


def rng(seed=0):
    return np.random.default_rng(seed)


def sample_from(f, phi, n, seed=0, h=None):
    """WeightedSample of n points from h (default f) with the single target phi under f."""
    h = f if h is None else h
    x = h.sample(n, rng(seed))
    return WeightedSample(x, h.logpdf(x), phi(x)[:, None], f.logpdf(x)[:, None])


def test_unweighted_case_recovers_f():
    f = GaussianDensity(np.zeros(2), np.eye(2))
    s = sample_from(f, lambda x: np.ones(len(x)), 10**5)
    g = gaussian_ce_update(s, 0)
    np.testing.assert_allclose(g.mean, s.points.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(g.mean, 0.0, atol=4 / math.sqrt(10**5))
    np.testing.assert_allclose(g.covariance, np.eye(2), atol=0.02)


def test_weights_on_one_point_fail():
    x = rng().normal(size=(50, 2))
    w = np.zeros(50)
    w[7] = 1.0
    with pytest.raises(SingularCovariance):
        gaussian_fit(x, w)


def test_all_zero_weights_unreachable():
    f = normal()
    s = sample_from(f, lambda x: np.zeros(len(x)), 100)
    with pytest.raises(UnreachableTarget):
        gaussian_ce_update(s, 0)
    with pytest.raises(UnreachableTarget):
        mixture_ce_update(s, 0, 2)


def test_x_squared_population_optimum():
    # g* proportional to x^2 phi(x): mean 0, variance E[x^4] / E[x^2] = 3
    n = 10**5
    f = normal()
    s = sample_from(f, lambda x: x[:, 0] ** 2, n, seed=1)
    g = gaussian_ce_update(s, 0)
    w = s.weights(0)
    x = s.points[:, 0]
    # delta-method standard errors of the weighted mean and variance
    wn = w / w.sum()
    se_mean = math.sqrt(np.sum(wn**2 * x**2))
    se_var = math.sqrt(np.sum(wn**2 * (x**2 - 3.0) ** 2))
    assert abs(g.mean[0]) < 3 * se_mean
    assert abs(g.covariance[0, 0] - 3.0) < 3 * se_var


def test_history_density_reweighting():
    # drawing from a wider h and reweighting by f/h gives the same optimum
    f = normal()
    h = normal(0.0, 2.0)
    s = sample_from(f, lambda x: x[:, 0] ** 2, 2 * 10**5, seed=2, h=h)
    g = gaussian_ce_update(s, 0)
    assert g.covariance[0, 0] == pytest.approx(3.0, rel=0.05)


def test_k1_mixture_equals_gaussian():
    f = GaussianDensity([1.0, -1.0], [[1.0, 0.3], [0.3, 2.0]])
    s = sample_from(f, lambda x: np.exp(x[:, 0]), 2000, seed=3)
    g = gaussian_ce_update(s, 0)
    m = mixture_ce_update(s, 0, 1)
    assert isinstance(m, MixtureDensity) and len(m.components) == 1
    np.testing.assert_allclose(m.components[0].mean, g.mean, rtol=1e-10)
    np.testing.assert_allclose(m.components[0].covariance, g.covariance, rtol=1e-10)


def test_bimodal_target_gives_opposite_means():
    # phi vanishes in the middle, so g* has two symmetric modes
    f = normal()
    s = sample_from(f, lambda x: (np.abs(x[:, 0]) > 1.5) * x[:, 0] ** 2, 20000, seed=4)
    m = mixture_ce_update(s, 0, 2, rng=rng(5))
    means = sorted(c.mean[0] for c in m.components)
    assert means[0] < -1 and means[1] > 1


def test_em_recovers_known_mixture():
    n = 10**5
    truth = MixtureDensity([GaussianDensity([-2.0, 0.0], np.eye(2)),
                            GaussianDensity([2.0, 1.0], 0.5 * np.eye(2))], [0.4, 0.6])
    x = truth.sample(n, rng(6))
    mix, _ = fit_weighted_gmm(x, np.ones(n), 2, rng(7))
    got = sorted((c.mean for c in mix.components), key=lambda m: m[0])
    np.testing.assert_allclose(got[0], [-2.0, 0.0], atol=0.05)
    np.testing.assert_allclose(got[1], [2.0, 1.0], atol=0.05)


def test_em_loglik_monotone():
    truth = MixtureDensity([normal(-3.0, 1.0), normal(1.0, 0.7), normal(4.0, 0.5)],
                           [0.3, 0.3, 0.4])
    x = truth.sample(5000, rng(8))
    w = rng(9).random(5000)
    _, hist = fit_weighted_gmm(x, w, 3, rng(10))
    assert len(hist) >= 2
    assert np.all(np.diff(hist) >= -1e-10)


def test_em_collapse_drops_component():
    # five points cannot support two 2-D components with d + 1 points each
    x = rng().normal(size=(5, 2))
    mix, _ = fit_weighted_gmm(x, np.ones(5), 2, rng())
    assert len(mix.components) == 1


def test_translation_equivariance():
    x = rng(11).normal(size=(300, 3))
    w = rng(12).random(300)
    t = np.array([5.0, -2.0, 0.5])
    a, b = gaussian_fit(x, w), gaussian_fit(x + t, w)
    np.testing.assert_allclose(b.mean, a.mean + t, atol=1e-12)
    np.testing.assert_allclose(b.covariance, a.covariance, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), shift=st.floats(-3, 3))
def test_update_increases_ce_objective(seed, shift):
    f = normal()
    s = sample_from(f, lambda x: np.exp(x[:, 0]), 500, seed=seed)
    prev = normal(shift, 1.5)
    new = gaussian_ce_update(s, 0)
    assert ce_objective(s, 0, new) >= ce_objective(s, 0, prev) - 1e-9


def test_weight_cap():
    x = rng().normal(size=(100, 1))
    phi = np.ones((100, 1))
    phi[0] = 1e12
    s = WeightedSample(x, np.zeros(100), phi, np.zeros((100, 1)))
    w = s.weights(0)
    assert w[0] == pytest.approx(1e6 * np.median(w[1:]))


def test_negligible_history_points_excluded():
    x = rng().normal(size=(20, 1))
    logh = np.zeros(20)
    logh[3] = -800.0
    s = WeightedSample(x, logh, np.ones((20, 1)), np.zeros((20, 1)))
    assert s.weights(0)[3] == 0.0
    assert s.valid.sum() == 19
