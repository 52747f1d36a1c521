import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from aiscv.densities import GaussianDensity, MixtureDensity, normal
from aiscv.errors import DegenerateControl, NumericalError, SupportViolation
from aiscv.estimators import (CvEstimate, EstimationProblem, Target, beta_hat, cv_estimate,
                              cv_integrand, is_estimate, log_ratio, mc_mixture_baseline,
                              mc_mixture_calls, naive_mc_baseline, naive_mc_calls,
                              weighted_criterion)


def rng(seed=0):
    return np.random.default_rng(seed)


# --- is_estimate ------------------------------------------------------------


def test_is_constant_phi_with_f_equal_g():
    p = normal().pdf(rng().normal(size=50))
    est = is_estimate(np.ones(50), p, p)
    assert est.value == 1.0
    assert est.integrand_variance == 0.0


def test_is_reduces_to_plain_mc():
    phi = rng().random(100)
    p = rng(1).random(100) + 0.1
    assert is_estimate(phi, p, p).value == pytest.approx(phi.mean(), rel=1e-15)


def test_is_three_point_arithmetic():
    # phi = (1, 2, 3), f/g = (2, 1, 0.5): mean of (2, 2, 1.5)
    est = is_estimate([1.0, 2.0, 3.0], [2.0, 1.0, 0.5], [1.0, 1.0, 1.0])
    assert est.value == pytest.approx(11 / 6, rel=1e-15)
    assert est.n == 3


def test_is_support_violation_names_index():
    with pytest.raises(SupportViolation) as info:
        is_estimate([1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [1.0, 0.0, 1.0])
    assert info.value.index == 1


def test_length_mismatch():
    with pytest.raises(ValueError):
        is_estimate([1.0, 2.0], [1.0], [1.0, 1.0])


# --- cv_estimate ------------------------------------------------------------


def test_cv_beta_zero_is_is():
    r = rng(2)
    phi, f, c, g = r.random(30), r.random(30), r.random(30), r.random(30) + 0.5
    a = cv_estimate(phi, f, c, g, 0.0)
    b = is_estimate(phi, f, g)
    assert a == b


def test_cv_zero_variance_with_optimal_control():
    x = rng(3).normal(size=200) * 2
    phi = x**2
    f = normal().pdf(x)
    g = normal(0.0, 2.0).pdf(x)
    i_true = 1.0
    control = phi * f / i_true
    est = cv_estimate(phi, f, control, g, i_true)
    assert est.value == pytest.approx(1.0, rel=1e-14)
    assert est.integrand_variance == pytest.approx(0.0, abs=1e-28)


def test_cv_against_loop_oracle():
    r = rng(4)
    n = 17
    phi, f, c, g = r.random(n), r.random(n), r.random(n), r.random(n) + 0.2
    beta = 0.37
    vals = []
    for k in range(n):
        vals.append((phi[k] * f[k] - beta * c[k]) / g[k])
    mean = sum(vals) / n
    var = sum((v - mean) ** 2 for v in vals) / (n - 1)
    est = cv_estimate(phi, f, c, g, beta)
    assert est.value == pytest.approx(mean + beta, rel=1e-14)
    assert est.integrand_variance == pytest.approx(var, rel=1e-12)


def test_cv_variance_three_term_expansion():
    r = rng(5)
    n = 1000
    phi, f, c, g = r.random(n), r.random(n), r.random(n), r.random(n) + 0.2
    beta = 0.8
    a, b = phi * f / g, c / g
    expansion = np.var(a, ddof=1) - 2 * beta * np.cov(a, b)[0, 1] + beta**2 * np.var(b, ddof=1)
    assert cv_estimate(phi, f, c, g, beta).integrand_variance == pytest.approx(expansion, rel=1e-10)


# --- beta_hat ---------------------------------------------------------------


def test_beta_hat_self_regression():
    r = rng(6)
    phi, f, g = r.random(50), r.random(50), r.random(50) + 0.1
    assert beta_hat(phi, f, phi * f, g) == pytest.approx(1.0, abs=1e-12)


def test_beta_hat_constant_control():
    g = np.array([0.5, 1.0, 2.0])
    with pytest.raises(DegenerateControl):
        beta_hat([1.0, 2.0, 3.0], [1.0, 1.0, 1.0], 3 * g, g)


def test_beta_hat_synthetic_population_value():
    # target = 2.5 * control + independent noise, so beta* = 2.5
    n = 10**5
    r = rng(7)
    b = r.gamma(2.0, 1.0, n)
    a = 2.5 * b + r.normal(0.0, 1.0, n) + 5.0
    g = np.ones(n)
    est = beta_hat(a, np.ones(n), b, g)
    se = 1.0 / (np.std(b) * math.sqrt(n))
    assert abs(est - 2.5) < 3 * se


def test_beta_hat_minimizes_variance():
    r = rng(8)
    n = 500
    phi, f, g = r.random(n), r.random(n), r.random(n) + 0.2
    c = phi * f + 0.3 * r.random(n)
    beta = beta_hat(phi, f, c, g)
    v = lambda b: cv_estimate(phi, f, c, g, b).integrand_variance
    assert v(beta) <= v(0.0)
    assert v(beta) <= v(beta + 0.1)
    assert v(beta) <= v(beta - 0.1)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), delta=st.floats(-3, 3))
def test_beta_hat_is_variance_minimum_property(seed, delta):
    r = rng(seed)
    n = 40
    phi, f, c, g = r.random(n), r.random(n), r.random(n), r.random(n) + 0.1
    beta = beta_hat(phi, f, c, g)
    v0 = cv_estimate(phi, f, c, g, beta).integrand_variance
    v1 = cv_estimate(phi, f, c, g, beta + delta).integrand_variance
    assert v0 <= v1 * (1 + 1e-12) + 1e-15


# --- weighted_criterion -----------------------------------------------------


def test_criterion_zero():
    est = [CvEstimate(1.0, 0.0, 10), CvEstimate(2.0, 0.0, 10)]
    assert weighted_criterion(est, [1.0, 1.0], 10) == 0.0


def test_criterion_single():
    assert weighted_criterion([CvEstimate(0.0, 4.0, 5)], [1.0], 8) == 0.5


def test_criterion_hand_case():
    est = [CvEstimate(0.0, 3.0, 10), CvEstimate(0.0, 5.0, 10)]
    assert weighted_criterion(est, [1.0, 2.0], 10) == pytest.approx(1.3, rel=1e-15)


# --- log ratio policy -------------------------------------------------------


def test_log_ratio_overflow():
    with pytest.raises(NumericalError):
        log_ratio(np.array([0.0, 800.0]), np.array([0.0, 0.0]))


def test_log_ratio_zero_density():
    with pytest.raises(SupportViolation):
        log_ratio(np.array([0.0]), np.array([-np.inf]))


# --- problems and baselines -------------------------------------------------


def test_problem_validation():
    f = normal()
    with pytest.raises(ValueError):
        EstimationProblem(lambda x: x, [f, GaussianDensity([0, 0], np.eye(2))])
    with pytest.raises(ValueError):
        EstimationProblem(lambda x: x, [f, f], weights=[1.0, 0.0])


def test_negative_model_output_rejected():
    prob = EstimationProblem(lambda x: -np.ones((len(x), 2)), [normal()] * 2)
    with pytest.raises(NumericalError):
        prob.evaluate(np.zeros((3, 1)))


def test_mixture_baseline_j1_is_crude_mc():
    f = normal(1.0, 0.5)
    prob = EstimationProblem(lambda x: np.abs(x), [f])
    est = mc_mixture_baseline(prob, 1000, rng(9))
    x = f.sample(1000, rng(9))
    assert est[0] == pytest.approx(np.abs(x).mean(), rel=1e-14)
    assert prob.n_calls == 1000


def test_mixture_baseline_identical_inputs_is_crude_mc():
    f = normal()
    prob = EstimationProblem(lambda x: np.column_stack([x[:, 0] ** 2, x[:, 0] ** 4]), [f, f])
    est = mc_mixture_baseline(prob, 500, rng(1))
    x = f.sample(500, rng(1))[:, 0]
    np.testing.assert_allclose(est, [np.mean(x**2), np.mean(x**4)], rtol=1e-14)


def test_mixture_baseline_unbiased_two_inputs():
    fs = [normal(0.0, 1.0), normal(2.0, 1.0)]
    prob = EstimationProblem(lambda x: x[:, :1] ** 2, fs)
    reps = np.array([mc_mixture_baseline(prob, 2000, rng(s)) for s in range(200)])
    se = reps.std(axis=0, ddof=1) / math.sqrt(200)
    truth = np.array([1.0, 5.0])
    assert np.all(np.abs(reps.mean(axis=0) - truth) < 4 * se)


def test_naive_constant_phi_exact():
    prob = EstimationProblem(lambda x: np.full((len(x), 1), 2.5), [normal(), normal(3.0, 1.0)])
    np.testing.assert_array_equal(naive_mc_baseline(prob, 101, rng()), [2.5, 2.5])
    assert prob.n_calls == naive_mc_calls(prob, 101) == 100


def test_naive_symmetric_targets_equal_variance():
    fs = [normal(-1.0, 1.0), normal(1.0, 1.0)]
    prob = EstimationProblem(lambda x: x[:, :1] ** 2, fs)
    reps = np.array([naive_mc_baseline(prob, 400, rng(s)) for s in range(300)])
    v = reps.var(axis=0, ddof=1)
    f_stat = v[0] / v[1]
    p = 2 * min(stats.f.cdf(f_stat, 299, 299), stats.f.sf(f_stat, 299, 299))
    assert p > 1e-3


def test_call_accounting_separate_targets():
    f = normal()
    targets = [Target(lambda x: x[:, 0] ** 2, f), Target(lambda x: np.abs(x[:, 0]), f, 2.0)]
    prob = EstimationProblem.from_targets(targets)
    mc_mixture_baseline(prob, 100, rng())
    assert prob.n_calls == mc_mixture_calls(prob, 100) == 200
    prob.reset_calls()
    naive_mc_baseline(prob, 100, rng())
    assert prob.n_calls == naive_mc_calls(prob, 100) == 100


def test_input_mixture():
    fs = [normal(0.0, 1.0), normal(3.0, 1.0)]
    prob = EstimationProblem(lambda x: x, fs, weights=[1.0, 3.0])
    mix = prob.input_mixture(weighted=True)
    assert isinstance(mix, MixtureDensity)
    np.testing.assert_allclose(mix.weights, [0.25, 0.75])
    assert prob.input_mixture() is not fs[0]


# --- unbiasedness with frozen parameters -----------------------------------


def test_cv_unbiased_on_polynomial_problem():
    # reference by brute-force crude Monte Carlo
    f = GaussianDensity([1.0, 2.0], np.eye(2))
    g = GaussianDensity([1.5, 2.5], [[2.0, 0.3], [0.3, 1.5]])
    control = GaussianDensity([1.2, 2.2], [[1.2, 0.0], [0.0, 1.2]])
    phi = lambda x: x[:, 0] ** 2 * np.abs(x[:, 1]) + x[:, 1] ** 2
    xb = f.sample(4 * 10**6, rng(99))
    ref = phi(xb).mean()
    ref_se = phi(xb).std() / math.sqrt(len(xb))
    vals = []
    for s in range(500):
        x = g.sample(400, rng(s))
        vals.append(cv_estimate(phi(x), f.pdf(x), control.pdf(x), g.pdf(x), 3.0).value)
    vals = np.array(vals)
    se = math.sqrt(vals.var(ddof=1) / 500 + ref_se**2)
    assert abs(vals.mean() - ref) < 4 * se


def test_cv_integrand_formula():
    assert cv_integrand(2.0, 3.0, 4.0, 2.0, 0.5) == pytest.approx(2.0)
