"""Probability densities over R^d: evaluation, log-evaluation and sampling.

Every density works on batches: ``x`` is either a single point of length
``dim`` or an ``(n, dim)`` array, and ``logpdf``/``pdf`` return a float or a
length-``n`` array accordingly. Densities are immutable once built; random
streams are always passed in by the caller.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .errors import ConfigError, SingularCovariance

logger = logging.getLogger(__name__)

#: log-densities below this value are reported as a pdf of exactly 0
LOG_PDF_FLOOR = -700.0
_LOG_2PI = math.log(2.0 * math.pi)


def _as_points(x, dim):
    """Return ``(points, single)`` with points of shape (n, dim)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
        single = True
    elif arr.ndim == 1:
        # a 1-D array is one point, unless the density is 1-D
        if dim == 1 and arr.shape[0] != 1:
            return arr.reshape(-1, 1), False
        arr = arr.reshape(1, -1)
        single = True
    elif arr.ndim == 2:
        single = False
    else:
        raise ValueError(f"points must be 1-D or 2-D, got shape {arr.shape}")
    if arr.shape[1] != dim:
        raise ValueError(f"dimension mismatch: density has dim={dim}, points have {arr.shape[1]}")
    return arr, single


def _finish(values, single):
    return float(values[0]) if single else values


def _check_count(n):
    if int(n) != n or n < 1:
        raise ValueError(f"sample size must be a positive integer, got {n!r}")
    return int(n)


class Density:
    """Base class; subclasses implement ``_logpdf`` and ``sample``."""

    dim: int

    def logpdf(self, x):
        pts, single = _as_points(x, self.dim)
        return _finish(self._logpdf(pts), single)

    def pdf(self, x):
        pts, single = _as_points(x, self.dim)
        lp = self._logpdf(pts)
        out = np.where(lp < LOG_PDF_FLOOR, 0.0, np.exp(np.maximum(lp, LOG_PDF_FLOOR)))
        return _finish(out, single)

    def _logpdf(self, pts):  # pragma: no cover - abstract
        raise NotImplementedError

    def sample(self, n, rng):  # pragma: no cover - abstract
        raise NotImplementedError

    def __call__(self, x):
        return self.pdf(x)


def cholesky_with_jitter(cov):
    """Lower Cholesky factor of ``cov``.

    On failure the diagonal is inflated once by ``1e-10 * trace / d``; a
    second failure raises :class:`SingularCovariance`.
    """
    cov = np.asarray(cov, dtype=float)
    try:
        return linalg.cholesky(cov, lower=True), cov
    except linalg.LinAlgError:
        pass
    d = cov.shape[0]
    jitter = 1e-10 * np.trace(cov) / d
    if not np.isfinite(jitter) or jitter <= 0:
        raise SingularCovariance("covariance has non-positive trace")
    cov = cov + jitter * np.eye(d)
    try:
        return linalg.cholesky(cov, lower=True), cov
    except linalg.LinAlgError as exc:
        raise SingularCovariance("covariance is not positive definite after jitter") from exc


class GaussianDensity(Density):
    """Multivariate normal N(mean, covariance)."""

    def __init__(self, mean, covariance):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(covariance, dtype=float))
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {d}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("mean and covariance must be finite")
        scale = max(np.max(np.abs(cov)), np.finfo(float).tiny)
        if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
            raise ValueError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        self._chol, cov = cholesky_with_jitter(cov)
        self.mean = mean
        self.covariance = cov
        self.dim = d
        self._log_norm = -0.5 * d * _LOG_2PI - np.sum(np.log(np.diag(self._chol)))
        self.mean.setflags(write=False)
        self.covariance.setflags(write=False)

    def _logpdf(self, pts):
        z = linalg.solve_triangular(self._chol, (pts - self.mean).T, lower=True)
        return self._log_norm - 0.5 * np.sum(z * z, axis=0)

    def sample(self, n, rng):
        n = _check_count(n)
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self._chol.T

    def __repr__(self):
        return f"GaussianDensity(mean={self.mean.tolist()}, covariance={self.covariance.tolist()})"


def normal(mean=0.0, std=1.0):
    """One-dimensional N(mean, std**2)."""
    if std <= 0:
        raise ValueError("std must be positive")
    return GaussianDensity([mean], [[std * std]])


class MixtureDensity(Density):
    """Finite mixture ``sum_k weights[k] * components[k]``."""

    def __init__(self, components: Sequence[Density], weights):
        components = list(components)
        weights = np.asarray(weights, dtype=float).ravel()
        if len(components) == 0:
            raise ValueError("a mixture needs at least one component")
        if len(components) != weights.shape[0]:
            raise ValueError("component count and weight count differ")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("mixture weights must be finite and non-negative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {weights.sum()!r}, not 1")
        dims = {c.dim for c in components}
        if len(dims) != 1:
            raise ValueError("mixture components have different dimensions")
        self.components = tuple(components)
        self.weights = weights
        self.weights.setflags(write=False)
        self.dim = dims.pop()

    def component_logpdfs(self, x):
        """(n, K) matrix of component log-densities."""
        pts, _ = _as_points(x, self.dim)
        return np.column_stack([c._logpdf(pts) for c in self.components])

    def _logpdf(self, pts):
        comp = np.column_stack([c._logpdf(pts) for c in self.components])
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logsumexp(comp + logw, axis=1)

    def sample(self, n, rng):
        n = _check_count(n)
        idx = rng.choice(len(self.components), size=n, p=self.weights)
        out = np.empty((n, self.dim))
        for k in np.unique(idx):
            mask = idx == k
            out[mask] = self.components[k].sample(int(mask.sum()), rng)
        return out

    @property
    def mean(self):
        return sum(w * np.asarray(c.mean) for w, c in zip(self.weights, self.components))


class LogNormalDensity(Density):
    """One-dimensional log-normal: ``log X ~ N(mu_ln, sigma_ln**2)``."""

    def __init__(self, mu_ln, sigma_ln):
        if not sigma_ln > 0:
            raise ValueError("sigma_ln must be positive")
        self.mu_ln = float(mu_ln)
        self.sigma_ln = float(sigma_ln)
        self.dim = 1

    @property
    def mean(self):
        return math.exp(self.mu_ln + 0.5 * self.sigma_ln**2)

    @property
    def cv(self):
        return math.sqrt(math.expm1(self.sigma_ln**2))

    def _logpdf(self, pts):
        x = pts[:, 0]
        out = np.full(x.shape, -np.inf)
        pos = x > 0
        lx = np.log(x[pos])
        z = (lx - self.mu_ln) / self.sigma_ln
        out[pos] = -0.5 * z * z - lx - math.log(self.sigma_ln) - 0.5 * _LOG_2PI
        return out

    def sample(self, n, rng):
        n = _check_count(n)
        return np.exp(self.mu_ln + self.sigma_ln * rng.standard_normal((n, 1)))


def lognormal_from_mean_cv(mean, cv):
    """Log-normal density with the given mean and coefficient of variation.

    ``sigma_ln**2 = log(1 + cv**2)`` and ``mu_ln = log(mean) - sigma_ln**2 / 2``.
    """
    if not (mean > 0 and cv > 0):
        raise ValueError("mean and cv must be positive")
    var_ln = math.log1p(cv * cv)
    return LogNormalDensity(math.log(mean) - 0.5 * var_ln, math.sqrt(var_ln))


@dataclass(frozen=True)
class MarginalSpec:
    """A Normal or LogNormal marginal given by its mean and coefficient of variation.

    Both families are monotone images of a standard normal ``z``, which is
    what the Gaussian copula in :class:`CorrelatedJointDensity` works with.
    """

    family: str
    mean: float
    cv: float

    def __post_init__(self):
        if self.family not in ("normal", "lognormal"):
            raise ValueError(f"unknown marginal family {self.family!r}")
        if not self.cv > 0:
            raise ValueError("cv must be positive")
        if self.family == "lognormal" and not self.mean > 0:
            raise ValueError("a lognormal marginal needs a positive mean")
        if self.family == "normal" and self.mean == 0:
            raise ValueError("a normal marginal given by cv needs a non-zero mean")

    @property
    def loc_scale(self):
        """(location, scale) of the underlying normal: x = T(loc + scale * z)."""
        if self.family == "normal":
            return self.mean, abs(self.mean) * self.cv
        var_ln = math.log1p(self.cv**2)
        return math.log(self.mean) - 0.5 * var_ln, math.sqrt(var_ln)

    def density(self):
        if self.family == "normal":
            return normal(*self.loc_scale)
        return LogNormalDensity(*self.loc_scale)

    def from_z(self, z):
        loc, scale = self.loc_scale
        y = loc + scale * z
        return np.exp(y) if self.family == "lognormal" else y

    def to_z(self, x):
        """Return ``(z, log |dz/dx|)``; points outside the support get ``-inf``."""
        loc, scale = self.loc_scale
        if self.family == "normal":
            return (x - loc) / scale, np.full(np.shape(x), -math.log(scale))
        z = np.full(np.shape(x), np.nan)
        logjac = np.full(np.shape(x), -np.inf)
        pos = x > 0
        lx = np.log(x[pos])
        z[pos] = (lx - loc) / scale
        logjac[pos] = -math.log(scale) - lx
        return z, logjac


def correlation_matrix(dim, pairs: Mapping[tuple[int, int], float]):
    """Unit-diagonal symmetric matrix with ``pairs[(i, j)]`` off the diagonal."""
    corr = np.eye(dim)
    for (i, j), rho in pairs.items():
        if i == j:
            raise ValueError("correlation pairs must name distinct coordinates")
        if not -1.0 < rho < 1.0:
            raise ValueError(f"correlation {rho} outside (-1, 1)")
        corr[i, j] = corr[j, i] = rho
    return corr


def is_positive_definite(matrix):
    try:
        linalg.cholesky(matrix, lower=True)
    except linalg.LinAlgError:
        return False
    return True


class CorrelatedJointDensity(Density):
    """Joint density of Normal/LogNormal marginals tied by a Gaussian copula.

    The correlation entries are used as the correlations of the underlying
    standard normals. For Normal marginals they are exactly the Pearson
    coefficients of the joint; for LogNormal marginals they are slightly
    distorted.
    """

    def __init__(self, marginals: Sequence[MarginalSpec], correlation=None):
        self.marginals = tuple(marginals)
        self.dim = len(self.marginals)
        if correlation is None:
            correlation = np.eye(self.dim)
        corr = np.array(correlation, dtype=float)
        if corr.shape != (self.dim, self.dim):
            raise ValueError("correlation matrix shape does not match the marginals")
        if not np.allclose(corr, corr.T, rtol=0, atol=1e-12) or not np.allclose(np.diag(corr), 1.0):
            raise ValueError("correlation matrix must be symmetric with unit diagonal")
        try:
            self._chol = linalg.cholesky(corr, lower=True)
        except linalg.LinAlgError as exc:
            raise SingularCovariance("correlation matrix is not positive definite") from exc
        self.correlation = corr
        self.correlation.setflags(write=False)
        self._log_norm = -0.5 * self.dim * _LOG_2PI - np.sum(np.log(np.diag(self._chol)))
        locs, scales = zip(*(m.loc_scale for m in self.marginals))
        self._loc = np.array(locs)
        self._scale = np.array(scales)
        self._is_log = np.array([m.family == "lognormal" for m in self.marginals])

    @classmethod
    def from_pairs(cls, marginals, pairs=None):
        return cls(marginals, correlation_matrix(len(marginals), pairs or {}))

    @property
    def independent(self):
        return bool(np.all(self.correlation == np.eye(self.dim)))

    @property
    def mean(self):
        return np.array([m.mean for m in self.marginals])

    def _logpdf(self, pts):
        y = pts.copy()
        logjac = np.zeros(pts.shape[0])
        valid = np.ones(pts.shape[0], dtype=bool)
        if np.any(self._is_log):
            xl = pts[:, self._is_log]
            valid = np.all(xl > 0, axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                lx = np.log(np.where(xl > 0, xl, 1.0))
            y[:, self._is_log] = lx
            logjac -= lx.sum(axis=1)
        z = (y - self._loc) / self._scale
        logjac -= np.sum(np.log(self._scale))
        u = linalg.solve_triangular(self._chol, z.T, lower=True)
        out = self._log_norm - 0.5 * np.sum(u * u, axis=0) + logjac
        return np.where(valid, out, -np.inf)

    def sample(self, n, rng):
        n = _check_count(n)
        z = rng.standard_normal((n, self.dim)) @ self._chol.T
        y = self._loc + self._scale * z
        y[:, self._is_log] = np.exp(y[:, self._is_log])
        return y


class ProductDensity(Density):
    """Density of ``(x, x')`` with independent factors: ``p1(x) * p2(x')``."""

    def __init__(self, first: Density, second: Density):
        self.first = first
        self.second = second
        self.dim = first.dim + second.dim

    def _logpdf(self, pts):
        d1 = self.first.dim
        return self.first._logpdf(pts[:, :d1]) + self.second._logpdf(pts[:, d1:])

    def sample(self, n, rng):
        n = _check_count(n)
        return np.hstack([self.first.sample(n, rng), self.second.sample(n, rng)])

    @property
    def mean(self):
        return np.concatenate([np.asarray(self.first.mean), np.asarray(self.second.mean)])


def lhs_sample(bounds, n, rng):
    """Latin hypercube design in the box ``bounds = [(lo, hi), ...]``.

    Each coordinate puts exactly one point in each of ``n`` equal-width
    strata, jittered uniformly inside its stratum; strata are matched across
    coordinates by independent random permutations.
    """
    n = _check_count(n)
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    lo, hi = bounds[:, 0], bounds[:, 1]
    if np.any(lo >= hi):
        raise ValueError("each bound needs lo < hi")
    p = bounds.shape[0]
    u = np.empty((n, p))
    for i in range(p):
        u[:, i] = (rng.permutation(n) + rng.random(n)) / n
    return lo + (hi - lo) * u


def density_from_config(record: Mapping):
    """Build a density from a declarative record.

    Supported families::

        {"family": "normal", "params": [mean, std]}
        {"family": "gaussian", "mean": [...], "covariance": [[...]]}
        {"family": "lognormal", "params": [mean, cv]}
        {"family": "joint", "marginals": [{"family": "lognormal", "params": [mean, cv]}, ...],
         "correlations": [[i, j, rho], ...]}
        {"family": "mixture", "components": [...], "weights": [...]}
        {"family": "product", "factors": [first, second]}
    """
    try:
        family = record["family"]
        if family == "normal":
            return normal(*record["params"])
        if family == "gaussian":
            return GaussianDensity(record["mean"], record["covariance"])
        if family == "lognormal":
            return lognormal_from_mean_cv(*record["params"])
        if family == "joint":
            marginals = [MarginalSpec(m["family"], *m["params"]) for m in record["marginals"]]
            pairs = {(int(i), int(j)): float(r) for i, j, r in record.get("correlations", [])}
            return CorrelatedJointDensity.from_pairs(marginals, pairs)
        if family == "mixture":
            comps = [density_from_config(c) for c in record["components"]]
            return MixtureDensity(comps, record["weights"])
        if family == "product":
            first, second = record["factors"]
            return ProductDensity(density_from_config(first), density_from_config(second))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed density record {dict(record)!r}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown density family {record.get('family')!r}")
