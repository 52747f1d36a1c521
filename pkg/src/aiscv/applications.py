"""Benchmark problems: Gaussian moments, Pick-Freeze Sobol' indices, and
input-distribution sensitivity of the cantilever beam."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .densities import (CorrelatedJointDensity, Density, GaussianDensity, MarginalSpec,
                        ProductDensity, correlation_matrix, is_positive_definite, lhs_sample,
                        normal)
from .errors import NumericalError
from .estimators import EstimationProblem

logger = logging.getLogger(__name__)

CANTILEVER_INPUTS = ("F_X", "F_Y", "E", "l_X", "l_Y", "L")
#: (family, coefficient of variation) of each cantilever input
CANTILEVER_FAMILIES = (("lognormal", 0.08), ("lognormal", 0.08), ("lognormal", 0.06),
                       ("normal", 0.1), ("normal", 0.1), ("normal", 0.1))
#: nominal parameters: six means, then correlations (l_X, l_Y), (L, l_X), (L, l_Y)
M_SOB = (556.8, 453.6, 200.0, 0.062, 0.0987, 4.29, 0.0, 0.0, 0.0)
#: uniform bounds of the nine uncertain distribution parameters
PARAM_BOUNDS = ((525.0, 575.0), (425.0, 475.0), (175.0, 225.0), (0.06, 0.07), (0.09, 0.1),
                (4.0, 5.0), (-0.6, 0.0), (0.0, 0.5), (0.0, 0.5))
_CORR_PAIRS = ((3, 4), (5, 3), (5, 4))


def cantilever_phi(inputs):
    """Maximal tip displacement of the cantilever beam.

    ``inputs`` is a 6-vector or an ``(n, 6)`` array of
    ``(F_X, F_Y, E, l_X, l_Y, L)``; the result is
    ``4 L^3 / (1e9 E l_X l_Y) * sqrt((F_X / l_X^2)^2 + (F_Y / l_Y^2)^2)``.
    """
    x = np.asarray(inputs, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    fx, fy, e, lx, ly, length = x.T
    if np.any(e <= 0) or np.any(lx <= 0) or np.any(ly <= 0) or np.any(length <= 0):
        raise ValueError("E, l_X, l_Y and L must be positive")
    out = _displacement(fx, fy, e, lx, ly, length)
    return float(out[0]) if single else out


def _displacement(fx, fy, e, lx, ly, length):
    return 4.0 * length**3 / (1e9 * e * lx * ly) * np.hypot(fx / lx**2, fy / ly**2)


def cantilever_response(x):
    """Vectorized model used inside estimators.

    Points outside the physical domain (a non-positive E, l_X, l_Y or L),
    which carry no input probability for the lognormal inputs and
    negligible probability for the normal ones, get response 0.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    ok = np.all(x[:, 2:] > 0, axis=1)
    out = np.zeros(x.shape[0])
    xo = x[ok]
    out[ok] = np.abs(_displacement(*xo.T))
    return out


def cantilever_density(m):
    """Joint input density of the beam for a 9-vector of distribution parameters."""
    m = np.asarray(m, dtype=float)
    marginals = [MarginalSpec(fam, float(mean), cv)
                 for (fam, cv), mean in zip(CANTILEVER_FAMILIES, m[:6])]
    pairs = {pair: float(rho) for pair, rho in zip(_CORR_PAIRS, m[6:9]) if rho != 0.0}
    return CorrelatedJointDensity.from_pairs(marginals, pairs)


# ---------------------------------------------------------------------------
# Gaussian moments


def gaussian_even_moment(j):
    """E[X^(2j)] for X ~ N(0, 1), i.e. the double factorial (2j - 1)!!."""
    out = 1
    for k in range(1, 2 * j, 2):
        out *= k
    return out


def moments_problem(J=10):
    """Even moments ``E[X^(2j)]``, j = 1..J, of N(0, 1), weighted by ``I_j^-2``."""
    if J < 2:
        raise ValueError("the moments problem needs J >= 2")
    f = normal(0.0, 1.0)
    powers = 2 * np.arange(1, J + 1)
    refs = np.array([gaussian_even_moment(j) for j in range(1, J + 1)], dtype=float)

    def model(x):
        return np.asarray(x, dtype=float).reshape(-1, 1) ** powers

    prob = EstimationProblem(model, [f] * J, refs**-2.0,
                             names=[f"m{p}" for p in powers])
    prob.references = refs
    return prob


# ---------------------------------------------------------------------------
# Sobol' indices


def _independent(f: Density):
    if isinstance(f, CorrelatedJointDensity):
        return f.independent
    if isinstance(f, GaussianDensity):
        cov = f.covariance
        return bool(np.all(cov == np.diag(np.diag(cov))))
    if isinstance(f, ProductDensity):
        return _independent(f.first) and _independent(f.second)
    return f.dim == 1


class CountingModel:
    """Wraps a base model and counts rows it is evaluated on."""

    def __init__(self, func):
        self.func = func
        self.calls = 0

    def __call__(self, x):
        x = np.atleast_2d(x)
        self.calls += x.shape[0]
        return np.asarray(self.func(x), dtype=float).reshape(-1)


@dataclass
class SobolProblem:
    phi: CountingModel
    f: Density
    d: int
    problem: EstimationProblem

    @property
    def augmented_density(self):
        return self.problem.densities[0]


def build_sobol_problem(phi, f: Density, d=None):
    """Pick-Freeze expectations as J = d + 2 targets on the augmented space.

    On a point ``(x, x')`` the targets are ``phi(x) phi(x^i)`` for each input
    ``i`` (``x^i`` takes coordinate ``i`` from ``x`` and the others from
    ``x'``), then ``phi(x)`` and ``phi(x)^2``. ``phi(x)`` is computed once and
    shared, so each augmented point costs ``d + 1`` base-model calls.
    """
    d = f.dim if d is None else d
    if d != f.dim:
        raise ValueError("d must equal the input dimension")
    if not _independent(f):
        raise ValueError("Sobol' indices require mutually independent inputs")
    base = phi if isinstance(phi, CountingModel) else CountingModel(phi)
    f_aug = ProductDensity(f, f)

    def model(z):
        z = np.atleast_2d(z)
        x, xp = z[:, :d], z[:, d:]
        y = base(x)
        out = np.empty((z.shape[0], d + 2))
        for i in range(d):
            xi = xp.copy()
            xi[:, i] = x[:, i]
            out[:, i] = y * base(xi)
        out[:, d] = y
        out[:, d + 1] = y * y
        return out

    names = [f"PF{i + 1}" for i in range(d)] + ["mean", "second_moment"]
    prob = EstimationProblem(model, [f_aug] * (d + 2), np.ones(d + 2), calls_per_point=d + 1,
                             names=names)
    return SobolProblem(base, f, d, prob)


def sobol_from_expectations(pf_estimates, return_flags=False):
    """First-order indices ``(E_i - E_mean^2) / (E_second - E_mean^2)``.

    Values are clamped to [-0.1, 1.1]; with ``return_flags`` a boolean mask
    of clamped indices is also returned.
    """
    e = np.asarray(pf_estimates, dtype=float)
    d = e.shape[-1] - 2
    mean, second = e[..., d], e[..., d + 1]
    denom = second - mean**2
    # relative threshold: a constant output leaves only rounding noise
    if np.any(~(denom > 1e-12 * np.abs(second))):
        raise NumericalError("non-positive output variance estimate")
    s = (e[..., :d] - mean[..., None] ** 2) / denom[..., None]
    clamped = (s < -0.1) | (s > 1.1)
    if np.any(clamped):
        logger.info("clamping %d Sobol' index estimates", int(clamped.sum()))
    s = np.clip(s, -0.1, 1.1)
    return (s, clamped) if return_flags else s


def cantilever_sobol_problem():
    """Sobol' problem of the beam at the nominal, independent parameters."""
    return build_sobol_problem(cantilever_response, cantilever_density(M_SOB))


# ---------------------------------------------------------------------------
# Sensitivity to distribution parameters


@dataclass
class ParamSensitivityProblem:
    params: np.ndarray
    densities: list
    problem: EstimationProblem
    redrawn: int = 0


def _corr_ok(m):
    corr = correlation_matrix(6, dict(zip(_CORR_PAIRS, m[6:9])))
    return is_positive_definite(corr)


def build_param_sensitivity_problem(J, rng, bounds=PARAM_BOUNDS):
    """J expectations of the beam response under J LHS-drawn input distributions.

    Rows whose correlation triple is not positive definite have their three
    correlation parameters redrawn inside the same LHS strata (up to 100
    tries), then uniformly in the bounds.
    """
    if J < 2:
        raise ValueError("J must be at least 2")
    params = lhs_sample(bounds, J, rng)
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[6:9, 0], bounds[6:9, 1]
    width = (hi - lo) / J
    redrawn = 0
    for row in params:
        if _corr_ok(row):
            continue
        redrawn += 1
        cell = np.floor((row[6:9] - lo) / width).clip(0, J - 1)
        for attempt in range(200):
            if attempt < 100:
                row[6:9] = lo + width * (cell + rng.random(3))
            else:
                row[6:9] = lo + (hi - lo) * rng.random(3)
            if _corr_ok(row):
                break
        else:
            raise NumericalError("could not draw a positive-definite correlation triple")
    if redrawn:
        logger.info("redrew %d parameter rows with non positive-definite correlations", redrawn)
    densities = [cantilever_density(m) for m in params]
    prob = EstimationProblem(cantilever_response, densities, np.ones(J),
                             names=[f"m{j + 1}" for j in range(J)])
    return ParamSensitivityProblem(params, densities, prob, redrawn)
