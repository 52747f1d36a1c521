"""Cross-entropy updates of the auxiliary densities from a weighted history sample.

For target ``j`` the history points ``x_n`` (drawn from the history mixture
``h``) carry weights ``phi_j(x_n) f_j(x_n) / h(x_n)``. The Gaussian update is
the weighted mean and covariance; the mixture update is a weighted EM fit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .densities import LOG_PDF_FLOOR, GaussianDensity, MixtureDensity
from .errors import SingularCovariance, UnreachableTarget

logger = logging.getLogger(__name__)

#: weights above WEIGHT_CAP times the median positive weight are capped
WEIGHT_CAP = 1e6


@dataclass
class WeightedSample:
    """History points with everything needed to weight them for any target.

    Parameters
    ----------
    points : (n, d) array
    history_logpdf : (n,) array
        ``log h(x_n)`` for the mixture that generated the concatenated sample.
    phi_values : (n, J) array
    log_f : (n, J) array
        ``log f_j(x_n)``.
    """

    points: np.ndarray
    history_logpdf: np.ndarray
    phi_values: np.ndarray
    log_f: np.ndarray
    weight_cap: float = WEIGHT_CAP
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        n = self.points.shape[0]
        self.history_logpdf = np.asarray(self.history_logpdf, dtype=float).reshape(n)
        self.phi_values = np.asarray(self.phi_values, dtype=float).reshape(n, -1)
        self.log_f = np.asarray(self.log_f, dtype=float).reshape(self.phi_values.shape)
        if np.any(self.phi_values < 0):
            raise ValueError("phi values must be non-negative")
        self.valid = self.history_logpdf >= LOG_PDF_FLOOR
        n_bad = int(n - self.valid.sum())
        if n_bad:
            logger.info("excluding %d history points with negligible history density", n_bad)

    @classmethod
    def from_pdfs(cls, points, history_pdf, phi_values, f_pdf, **kwargs):
        with np.errstate(divide="ignore"):
            return cls(points, np.log(history_pdf), phi_values, np.log(f_pdf), **kwargs)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def history_pdf(self):
        return np.exp(self.history_logpdf)

    def weights(self, j):
        """CE weights ``phi_j f_j / h`` on every point (excluded points get 0), capped."""
        if j in self._cache:
            return self._cache[j]
        w = np.zeros(self.n)
        v = self.valid
        with np.errstate(over="ignore"):
            w[v] = self.phi_values[v, j] * np.exp(self.log_f[v, j] - self.history_logpdf[v])
        if not np.all(np.isfinite(w)):
            raise UnreachableTarget(f"non-finite CE weights for target {j}")
        pos = w[w > 0]
        if pos.size:
            cap = self.weight_cap * np.median(pos)
            n_cap = int(np.sum(w > cap))
            if n_cap:
                logger.debug("capping %d CE weights of target %d", n_cap, j)
                w = np.minimum(w, cap)
        self._cache[j] = w
        return w


def _weighted_moments(points, w):
    total = w.sum()
    mean = w @ points / total
    centred = points - mean
    cov = (centred * w[:, None]).T @ centred / total
    return mean, 0.5 * (cov + cov.T)


def gaussian_fit(points, w):
    """Weighted-MLE Gaussian; raises when the weights cannot define one."""
    points = np.asarray(points, dtype=float)
    w = np.asarray(w, dtype=float)
    if not w.sum() > 0:
        raise UnreachableTarget("all cross-entropy weights are zero: target unreachable from history")
    d = points.shape[1]
    if np.count_nonzero(w) < d + 1:
        raise SingularCovariance(
            f"only {np.count_nonzero(w)} points carry weight, need at least {d + 1}")
    mean, cov = _weighted_moments(points, w)
    return GaussianDensity(mean, cov)


def gaussian_ce_update(sample: WeightedSample, target_index: int):
    """Gaussian auxiliary density for one target: weighted mean and covariance."""
    return gaussian_fit(sample.points, sample.weights(target_index))


def _kmeanspp(points, w, k, rng):
    p = w / w.sum()
    centres = [points[rng.choice(len(points), p=p)]]
    for _ in range(1, k):
        d2 = np.min([np.sum((points - c) ** 2, axis=1) for c in centres], axis=0)
        q = p * d2
        if not q.sum() > 0:
            break
        centres.append(points[rng.choice(len(points), p=q / q.sum())])
    return np.array(centres)


def _em_from_resp(points, w, resp):
    comps = []
    weights = []
    for r in resp.T:
        wr = w * r
        mass = wr.sum()
        mean, cov = _weighted_moments(points, wr)
        comps.append(GaussianDensity(mean, cov))
        weights.append(mass)
    weights = np.array(weights)
    return comps, weights / weights.sum()


def fit_weighted_gmm(points, w, k, rng, tol=1e-8, max_iter=200):
    """Weighted EM for a k-component Gaussian mixture.

    Returns ``(mixture, loglik_history)`` where the log-likelihood is the
    normalized weighted sum ``sum_n w_n log g(x_n) / sum_n w_n``. Components
    whose weight falls below 1e-8 or whose covariance turns singular are
    dropped and the fit restarts with one component fewer.
    """
    points = np.asarray(points, dtype=float)
    keep = w > 0
    points, w = points[keep], np.asarray(w, dtype=float)[keep] / w[keep].sum()
    while k >= 1:
        try:
            return _fit_gmm_k(points, w, k, rng, tol, max_iter)
        except _Collapse:
            logger.info("mixture component collapsed, refitting with K=%d", k - 1)
            k -= 1
    raise SingularCovariance("every mixture component collapsed")


class _Collapse(Exception):
    pass


def _fit_gmm_k(points, w, k, rng, tol, max_iter):
    d = points.shape[1]
    if len(points) < k * (d + 1):
        raise _Collapse
    centres = _kmeanspp(points, w, k, rng)
    if len(centres) < k:
        raise _Collapse
    dist = np.stack([np.sum((points - c) ** 2, axis=1) for c in centres], axis=1)
    resp = np.zeros_like(dist)
    resp[np.arange(len(points)), np.argmin(dist, axis=1)] = 1.0
    history = []
    for _ in range(max_iter):
        try:
            comps, mix = _em_from_resp(points, w, resp)
        except SingularCovariance:
            raise _Collapse
        if np.any(mix < 1e-8) or not np.all(np.isfinite(mix)):
            raise _Collapse
        logp = np.column_stack([c._logpdf(points) for c in comps]) + np.log(mix)
        lse = logsumexp(logp, axis=1)
        ll = float(w @ lse)
        resp = np.exp(logp - lse[:, None])
        if history and ll - history[-1] < tol:
            history.append(ll)
            break
        history.append(ll)
    return MixtureDensity(comps, mix), history


def mixture_ce_update(sample: WeightedSample, target_index: int, K: int, rng=None):
    """Gaussian-mixture auxiliary density for one target by weighted EM.

    ``K=1`` is exactly :func:`gaussian_ce_update`.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    w = sample.weights(target_index)
    if K == 1:
        g = gaussian_ce_update(sample, target_index)
        return MixtureDensity([g], [1.0])
    if not w.sum() > 0:
        raise UnreachableTarget("all cross-entropy weights are zero: target unreachable from history")
    rng = np.random.default_rng(0) if rng is None else rng
    mix, _ = fit_weighted_gmm(sample.points, w, K, rng)
    return mix


def ce_objective(sample: WeightedSample, target_index: int, density):
    """Stochastic-counterpart CE objective ``sum_n w_n log g(x_n)``."""
    w = sample.weights(target_index)
    pos = w > 0
    return float(w[pos] @ density.logpdf(sample.points[pos]))
