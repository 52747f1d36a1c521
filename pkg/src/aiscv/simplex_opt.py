"""Convex optimization of the sampling-mixture weights over the simplex.

The objective, summed over history points ``x_n`` drawn from ``h``, is::

    F(alpha) = sum_n  num_n / (g_alpha(x_n) h(x_n)),
    num_n    = sum_j w_j (phi_j f_j - beta_j g_j)(x_n)**2,
    g_alpha  = sum_j alpha_j g_j.

Internally it is stored as ``a_n = num_n / h_n**2`` and ``c_nj = g_j(x_n) / h_n``
so that ``F(alpha) = sum_n a_n / (c_n . alpha)``; both quantities are ratios
of densities and stay in floating-point range where the raw pdfs do not.
"""

from __future__ import annotations

import logging

import numpy as np

from .errors import NumericalError

logger = logging.getLogger(__name__)

ALPHA_FLOOR = 1e-6


class AlphaObjective:
    """``F(alpha) = sum_n a_n / (c_n . alpha)`` over the floored simplex."""

    def __init__(self, numerators, component_pdfs, history_pdf):
        numerators = np.asarray(numerators, dtype=float).ravel()
        component_pdfs = np.asarray(component_pdfs, dtype=float)
        history_pdf = np.asarray(history_pdf, dtype=float).ravel()
        if component_pdfs.ndim == 1:
            component_pdfs = component_pdfs[:, None]
        if np.any(numerators < 0):
            raise ValueError("numerators must be non-negative")
        if np.any(~(history_pdf > 0)):
            raise ValueError("history pdf must be positive at every point")
        self._set(numerators / history_pdf**2, component_pdfs / history_pdf[:, None])

    @classmethod
    def from_scaled(cls, scaled_numerators, ratios):
        """Build from ``a_n = num_n / h_n**2`` and ``c_nj = g_j(x_n) / h_n`` directly."""
        obj = cls.__new__(cls)
        obj._set(np.asarray(scaled_numerators, dtype=float).ravel(), np.asarray(ratios, dtype=float))
        return obj

    def _set(self, a, c):
        if c.ndim != 2 or c.shape[0] != a.shape[0]:
            raise ValueError("component matrix must be (n, J) with one row per numerator")
        if np.any(a < 0) or np.any(c < 0) or not (np.all(np.isfinite(a)) and np.all(np.isfinite(c))):
            raise ValueError("objective data must be finite and non-negative")
        keep = a > 0
        self.a = a[keep]
        self.c = c[keep]
        self.J = c.shape[1]
        self.n = a.shape[0]

    def value(self, alpha):
        g = self.c @ alpha
        with np.errstate(divide="ignore"):
            return float(np.sum(self.a / g)) if self.a.size else 0.0

    def gradient(self, alpha):
        if not self.a.size:
            return np.zeros(self.J)
        g = self.c @ alpha
        return -(self.a / g**2) @ self.c


def check_alpha(alpha, J, floor=ALPHA_FLOOR):
    alpha = np.asarray(alpha, dtype=float).ravel()
    if alpha.shape != (J,):
        raise ValueError(f"alpha must have length {J}")
    if abs(alpha.sum() - 1.0) > 1e-10 or np.any(alpha < floor * (1 - 1e-9)):
        raise ValueError("alpha is outside the floored simplex")
    return alpha


def objective_value(obj: AlphaObjective, alpha):
    """Objective at a point of the floored simplex."""
    return obj.value(check_alpha(alpha, obj.J))


def project_simplex(y, total=1.0):
    """Euclidean projection of ``y`` onto ``{x >= 0, sum x = total}`` (sort-based)."""
    y = np.asarray(y, dtype=float)
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(y - theta, 0.0)


def project_floored_simplex(y, floor=ALPHA_FLOOR):
    """Projection onto ``{x >= floor, sum x = 1}``."""
    y = np.asarray(y, dtype=float)
    J = y.size
    if J * floor >= 1:
        raise ValueError("floor too large for this dimension")
    x = floor + project_simplex(y - floor, 1.0 - J * floor)
    return x / x.sum()


def kkt_residual(obj: AlphaObjective, alpha, scale=1.0, floor=ALPHA_FLOOR):
    """Projected-gradient stationarity measure ``|P(alpha - grad/scale) - alpha|_inf``."""
    g = obj.gradient(alpha) / scale
    return float(np.max(np.abs(project_floored_simplex(alpha - g, floor) - alpha)))


def minimize_alpha(obj: AlphaObjective, alpha_start, tol=1e-6, max_iter=500, floor=ALPHA_FLOOR,
                   return_trace=False):
    """Minimize the objective over the floored simplex.

    Projected gradient descent with Barzilai-Borwein trial steps and Armijo
    backtracking; every accepted step decreases the objective. The objective
    is normalized by its starting value, so ``tol`` bounds a relative
    projected-gradient residual.
    """
    J = obj.J
    x = project_floored_simplex(np.asarray(alpha_start, dtype=float).ravel(), floor)
    if x.shape != (J,):
        raise ValueError(f"alpha_start must have length {J}")
    f = obj.value(x)
    if not np.isfinite(f):
        raise NumericalError("alpha objective is not finite at the starting point")
    trace = [f]
    if J == 1 or f == 0.0:
        return (x, trace) if return_trace else x
    scale = f
    grad = obj.gradient(x) / scale
    fn = 1.0
    step = 1.0 / max(np.max(np.abs(grad)), 1e-12)
    for it in range(max_iter):
        if np.max(np.abs(project_floored_simplex(x - grad, floor) - x)) <= tol:
            break
        d = project_floored_simplex(x - step * grad, floor) - x
        slope = float(grad @ d)
        if slope >= 0:
            break
        s = 1.0
        accepted = False
        for _ in range(60):
            x_new = x + s * d
            f_new = obj.value(x_new) / scale
            if np.isfinite(f_new) and f_new <= fn + 1e-4 * s * slope:
                accepted = True
                break
            s *= 0.5
        if not accepted:
            logger.debug("line search stalled at iteration %d", it)
            break
        x_new = np.maximum(x_new, floor)
        x_new /= x_new.sum()
        f_new = obj.value(x_new) / scale
        if f_new > fn:
            break
        grad_new = obj.gradient(x_new) / scale
        sk = x_new - x
        yk = grad_new - grad
        sy = float(sk @ yk)
        step = float(sk @ sk) / sy if sy > 0 else step * 2.0
        step = min(max(step, 1e-12), 1e12)
        x, grad, fn = x_new, grad_new, f_new
        trace.append(fn * scale)
    return (x, trace) if return_trace else x
