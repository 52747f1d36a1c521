"""Importance-sampling and control-variate estimators, plus Monte Carlo baselines.

All estimators take per-point arrays evaluated on a sample drawn from the
sampling density ``g``. The control functions are always probability
densities, so their known integral is 1 and the control-variate correction
is ``+ beta``.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .densities import Density, MixtureDensity
from .errors import DegenerateControl, NumericalError, SupportViolation

logger = logging.getLogger(__name__)

#: likelihood ratios are computed as exp(log f - log g); larger exponents are an error
MAX_LOG_RATIO = 700.0


@dataclass(frozen=True)
class CvEstimate:
    """Point estimate with the empirical variance of its per-sample integrand.

    The variance of the estimate itself is ``integrand_variance / n``.
    """

    value: float
    integrand_variance: float
    n: int

    @property
    def variance(self):
        return self.integrand_variance / self.n


@dataclass(frozen=True)
class Target:
    """One expectation ``E_f[phi(X)]`` with weight ``w`` in the criterion."""

    phi: Callable
    f: Density
    w: float = 1.0


class EstimationProblem:
    """J expectations ``I_j = E_{f_j}[phi_j(X)]`` over a common input space.

    Parameters
    ----------
    model : callable
        Maps an ``(n, d)`` array to an ``(n, J)`` array of non-negative
        values ``phi_j(x_n)``. One model call yields every target at a point.
    densities : sequence of Density
        Input densities ``f_j``; pass the same object repeatedly when the
        targets share one input distribution.
    weights : sequence of float
        Positive weights ``w_j`` of the criterion ``sum_j w_j Var(I_j)``.
    calls_per_point : int
        Number of underlying model calls consumed by evaluating one point
        (``d + 1`` for Pick-Freeze augmented points).
    """

    def __init__(self, model, densities: Sequence[Density], weights=None, calls_per_point=1,
                 names=None):
        densities = list(densities)
        if len(densities) == 0:
            raise ValueError("at least one target is required")
        dims = {f.dim for f in densities}
        if len(dims) != 1:
            raise ValueError("all input densities must share one dimension")
        weights = np.ones(len(densities)) if weights is None else np.asarray(weights, dtype=float)
        if weights.shape != (len(densities),):
            raise ValueError("one weight per target is required")
        if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be positive and finite")
        self.model = model
        self.densities = densities
        self.weights = weights
        self.dim = dims.pop()
        self.calls_per_point = int(calls_per_point)
        self.names = list(names) if names is not None else [f"I{j + 1}" for j in range(self.J)]
        self._per_target = None
        self._calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_targets(cls, targets: Sequence[Target], names=None):
        """Problem whose targets have separate functions; each costs one call per point."""
        targets = list(targets)
        phis = [t.phi for t in targets]

        def model(x):
            return np.column_stack([np.asarray(p(x), dtype=float).reshape(-1) for p in phis])

        prob = cls(model, [t.f for t in targets], [t.w for t in targets], names=names)
        prob._per_target = phis
        return prob

    @property
    def J(self):
        return len(self.densities)

    @property
    def n_calls(self):
        return self._calls

    def reset_calls(self):
        with self._lock:
            self._calls = 0

    def _count(self, k):
        with self._lock:
            self._calls += int(k)

    @property
    def shared_input(self):
        """True when every target uses the same input density object (Case 1)."""
        return all(f is self.densities[0] for f in self.densities)

    def evaluate(self, x):
        """(n, J) matrix of phi values; charges the call counter."""
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        if self._per_target is not None:
            self._count(n * self.J)
        else:
            self._count(n * self.calls_per_point)
        out = np.asarray(self.model(x), dtype=float).reshape(n, -1)
        if out.shape[1] == 1 and self.J > 1:
            # one shared function for every target
            out = np.broadcast_to(out, (n, self.J))
        elif out.shape[1] != self.J:
            raise ValueError(f"model returned {out.shape[1]} columns, expected {self.J}")
        if np.any(out < 0) or np.any(np.isnan(out)):
            raise NumericalError("model returned negative or NaN values")
        return out

    def evaluate_target(self, x, j):
        """phi_j on x; separate-function problems charge only one call per point."""
        if self._per_target is None:
            return self.evaluate(x)[:, j]
        x = np.asarray(x, dtype=float)
        self._count(x.shape[0])
        return np.asarray(self._per_target[j](x), dtype=float).reshape(-1)

    def log_input_pdfs(self, x):
        """(n, J) matrix of ``log f_j(x_n)``, evaluating each distinct density once."""
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        cache = {}
        cols = []
        for f in self.densities:
            key = id(f)
            if key not in cache:
                cache[key] = f.logpdf(x)
            cols.append(cache[key])
        return np.column_stack(cols)

    def input_mixture(self, weighted=False):
        """Uniform (or w-weighted) mixture of the input densities."""
        if self.shared_input:
            return self.densities[0]
        mix = self.weights / self.weights.sum() if weighted else np.full(self.J, 1.0 / self.J)
        return MixtureDensity(self.densities, mix)


def _check_lengths(*arrays):
    n = len(arrays[0])
    if n < 1 or any(len(a) != n for a in arrays):
        raise ValueError("input arrays must have equal positive length")
    return n


def _check_support(g_pdf):
    bad = np.flatnonzero(~(g_pdf > 0))
    if bad.size:
        raise SupportViolation(
            f"sampling density is zero at sample point {bad[0]}", index=int(bad[0]))


def _sample_var(values):
    return float(np.var(values, ddof=1)) if len(values) >= 2 else float("nan")


def log_ratio(log_num, log_den):
    """``exp(log_num - log_den)`` with the overflow policy of the estimators."""
    log_num = np.asarray(log_num, dtype=float)
    log_den = np.asarray(log_den, dtype=float)
    bad = np.flatnonzero(~(log_den > -np.inf))
    if bad.size:
        raise SupportViolation(f"sampling density is zero at sample point {bad[0]}",
                               index=int(bad[0]))
    diff = log_num - log_den
    over = np.flatnonzero(diff > MAX_LOG_RATIO)
    if over.size:
        raise NumericalError(f"likelihood ratio overflows at sample point {over[0]}")
    return np.exp(diff)


def is_estimate(phi_values, f_pdf, g_pdf):
    """Importance-sampling estimate: mean of ``phi * f / g``."""
    phi_values, f_pdf, g_pdf = (np.asarray(a, dtype=float).ravel() for a in (phi_values, f_pdf, g_pdf))
    n = _check_lengths(phi_values, f_pdf, g_pdf)
    _check_support(g_pdf)
    integrand = phi_values * f_pdf / g_pdf
    return CvEstimate(float(np.mean(integrand)), _sample_var(integrand), n)


def cv_integrand(phi_values, f_pdf, control_pdf, g_pdf, beta):
    return (phi_values * f_pdf - beta * control_pdf) / g_pdf


def cv_estimate(phi_values, f_pdf, control_pdf, g_pdf, beta):
    """IS estimate with the control density ``control_pdf``: mean of
    ``(phi f - beta control) / g`` plus ``beta``."""
    arrays = [np.asarray(a, dtype=float).ravel() for a in (phi_values, f_pdf, control_pdf, g_pdf)]
    n = _check_lengths(*arrays)
    _check_support(arrays[3])
    integrand = cv_integrand(*arrays, beta)
    return CvEstimate(float(np.mean(integrand) + beta), _sample_var(integrand), n)


def beta_from_ratios(target_ratio, control_ratio):
    """Regression coefficient cov(target, control) / var(control), (n - 1) normalized."""
    n = len(target_ratio)
    if n < 2:
        raise ValueError("beta estimation needs at least two points")
    cc = control_ratio - control_ratio.mean()
    var = np.dot(cc, cc) / (n - 1)
    scale = max(abs(control_ratio.mean()), np.finfo(float).tiny)
    if not var > (1e-13 * scale) ** 2:
        raise DegenerateControl("control ratio is constant on the sample")
    cov = np.dot(cc, target_ratio - target_ratio.mean()) / (n - 1)
    return float(cov / var)


def beta_hat(phi_values, f_pdf, control_pdf, g_pdf):
    """Empirical optimal control parameter on one sample drawn from ``g``."""
    arrays = [np.asarray(a, dtype=float).ravel() for a in (phi_values, f_pdf, control_pdf, g_pdf)]
    _check_lengths(*arrays)
    phi_values, f_pdf, control_pdf, g_pdf = arrays
    _check_support(g_pdf)
    return beta_from_ratios(phi_values * f_pdf / g_pdf, control_pdf / g_pdf)


def weighted_criterion(estimates: Sequence[CvEstimate], weights, n_final):
    """``sum_j w_j * integrand_variance_j / n_final``."""
    weights = np.asarray(weights, dtype=float)
    if len(estimates) != len(weights):
        raise ValueError("one weight per estimate is required")
    if n_final < 1:
        raise ValueError("n_final must be positive")
    v = np.array([e.integrand_variance for e in estimates])
    return float(np.dot(weights, v) / n_final)


def mc_mixture_baseline(problem: EstimationProblem, n_total, rng):
    """One sample from the uniform mixture of the ``f_j``, reweighted per target.

    When every target shares one input density the mixture is that density
    and the estimates are crude Monte Carlo means.
    """
    if n_total < 2:
        raise ValueError("n_total must be at least 2")
    h = problem.input_mixture()
    x = h.sample(n_total, rng)
    phi = problem.evaluate(x)
    if problem.shared_input:
        return phi.mean(axis=0)
    log_h = h.logpdf(x)
    ratio = log_ratio(problem.log_input_pdfs(x), log_h[:, None])
    return np.mean(phi * ratio, axis=0)


def naive_mc_baseline(problem: EstimationProblem, n_total, rng):
    """Independent crude Monte Carlo per target with ``n_total // J`` points each.

    The remainder of a non-divisible budget is discarded.
    """
    m = n_total // problem.J
    if m < 1:
        raise ValueError("n_total must be at least J")
    out = np.empty(problem.J)
    for j, f in enumerate(problem.densities):
        x = f.sample(m, rng)
        out[j] = np.mean(problem.evaluate_target(x, j))
    return out


def naive_mc_calls(problem: EstimationProblem, n_total):
    """Model calls consumed by :func:`naive_mc_baseline`."""
    m = n_total // problem.J
    per_point = 1 if problem._per_target is not None else problem.calls_per_point
    return problem.J * m * per_point


def mc_mixture_calls(problem: EstimationProblem, n_total):
    """Model calls consumed by :func:`mc_mixture_baseline`."""
    per_point = problem.J if problem._per_target is not None else problem.calls_per_point
    return n_total * per_point
