"""Adaptive importance sampling with control variates for J expectations at once.

One run alternates three updates on a growing history sample:

* each auxiliary density ``g_j`` is refitted by cross-entropy on the whole
  history, reweighted by ``phi_j f_j / h``;
* the sampling mixture weights ``alpha`` minimize the weighted variance sum
  (a convex problem on the simplex), warm-started at the previous weights;
* the control parameters ``beta_j`` are regressed on the newest batch only.

The loop stops when spending another batch on adaptation no longer lowers
the projected final criterion, or when half the budget is used. The rest of
the budget is a fresh sample from the last mixture, on which the
control-variate estimates are computed, so they are unbiased given the
fitted parameters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .ce_update import WeightedSample, gaussian_ce_update, mixture_ce_update
from .densities import Density, MixtureDensity
from .errors import BudgetError, DegenerateControl, NumericalError
from .estimators import CvEstimate, EstimationProblem, beta_from_ratios, log_ratio
from .simplex_opt import ALPHA_FLOOR, AlphaObjective, minimize_alpha

logger = logging.getLogger(__name__)

# named RNG streams derived from the root seed
_INIT, _ITER, _FINAL, _EM = 0, 1, 2, 3


def stream(seed, *key):
    """Generator for a named sub-stream of ``seed`` (int or SeedSequence)."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    child = np.random.SeedSequence(root.entropy, spawn_key=tuple(root.spawn_key) + tuple(key))
    return np.random.default_rng(child)


@dataclass(frozen=True)
class BudgetSchedule:
    """Total budget ``n_max`` (sample points), batch size ``n_k``, initial size ``n0``."""

    n_max: int
    n_k: int
    n0: int

    def __post_init__(self):
        if min(self.n_max, self.n_k, self.n0) < 1:
            raise ValueError("budget sizes must be positive")
        if self.n0 + self.n_k > self.n_max / 2:
            raise ValueError("schedule must allow at least one adaptation step (n0 + n_k <= n_max / 2)")

    @classmethod
    def stationary(cls, n_max, fraction=0.1):
        n_k = int(n_max * fraction)
        return cls(n_max, n_k, n_k)


@dataclass
class IterationRecord:
    k: int
    alpha: list
    beta: list
    criterion: float
    n_eval: int
    lambda_means: list

    def as_dict(self):
        return {"k": self.k, "alpha": self.alpha, "beta": self.beta,
                "criterion": self.criterion, "n_eval": self.n_eval,
                "lambda_means": self.lambda_means}


@dataclass
class AdaptiveState:
    """Everything a run carries between iterations.

    ``gen_logpdf[:, i]`` holds ``log`` of the i-th generating density (h0,
    then each sampling mixture) at every history point; the history density
    ``h_k`` is their mixture with weights ``N_i / N_eval``.
    """

    schedule: BudgetSchedule
    seed: object
    family: str
    h0: Density
    k: int = 0
    points: np.ndarray = None
    phi: np.ndarray = None
    log_f: np.ndarray = None
    gen_logpdf: np.ndarray = None
    sizes: list = field(default_factory=list)
    generators: list = field(default_factory=list)
    lambdas: list = None
    alpha: np.ndarray = None
    beta: np.ndarray = None
    initial_estimates: np.ndarray = None
    criteria: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    stop_reason: str = None
    calls_at_start: int = 0

    @property
    def n_eval(self):
        return int(sum(self.sizes))

    @property
    def remaining(self):
        return self.schedule.n_max - self.n_eval

    def history_logpdf(self):
        logw = np.log(np.asarray(self.sizes, dtype=float) / self.n_eval)
        return logsumexp(self.gen_logpdf + logw, axis=1)

    def sampling_density(self):
        if self.lambdas is None:
            return self.h0
        return MixtureDensity(self.lambdas, self.alpha)

    def batch(self, i):
        start = int(sum(self.sizes[:i]))
        return slice(start, start + self.sizes[i])


@dataclass
class RunReport:
    estimates: np.ndarray
    integrand_variances: np.ndarray
    n_final: int
    iterations: int
    stop_reason: str
    trace: list
    n_calls: int
    initial_estimates: np.ndarray

    @property
    def estimate_variances(self):
        return self.integrand_variances / self.n_final


def _family_size(family):
    if family == "gaussian":
        return 1
    if family.startswith("mixture-"):
        return int(family.split("-", 1)[1])
    raise ValueError(f"unknown auxiliary family {family!r}")


def _lambda_mean(density):
    return np.asarray(density.mean, dtype=float).ravel().tolist()


def initial_alpha(initial_estimates, weights, floor=ALPHA_FLOOR):
    """Weights proportional to ``sqrt(w_j) * I_j``, normalized then floored."""
    raw = np.sqrt(weights) * np.asarray(initial_estimates, dtype=float)
    if not np.any(raw > 0):
        raise NumericalError("every initial estimate is zero; cannot initialize the mixture")
    alpha = raw / raw.sum()
    if np.any(alpha < floor):
        alpha = np.maximum(alpha, floor)
        alpha /= alpha.sum()
    return alpha


def initialize(problem: EstimationProblem, schedule: BudgetSchedule, h0_mode="uniform", seed=0,
               family="gaussian"):
    """Draw the initial sample from ``h0`` and set the starting parameters."""
    _family_size(family)
    if h0_mode not in ("uniform", "weighted"):
        raise ValueError("h0_mode must be 'uniform' or 'weighted'")
    h0 = problem.input_mixture(weighted=h0_mode == "weighted")
    state = AdaptiveState(schedule=schedule, seed=seed, family=family, h0=h0,
                          calls_at_start=problem.n_calls)
    x = h0.sample(schedule.n0, stream(seed, _INIT))
    phi = problem.evaluate(x)
    log_f = problem.log_input_pdfs(x)
    if problem.shared_input:
        log_h0 = log_f[:, 0]
    else:
        mix = h0.weights
        log_h0 = logsumexp(log_f + np.log(mix), axis=1)
    ratio = phi * log_ratio(log_f, log_h0[:, None])
    i0 = ratio.mean(axis=0)
    state.points, state.phi, state.log_f = x, phi, log_f
    state.gen_logpdf = log_h0[:, None]
    state.sizes = [schedule.n0]
    state.generators = [h0]
    state.initial_estimates = i0
    state.alpha = initial_alpha(i0, problem.weights)
    state.beta = i0.copy()
    # stopping now would mean plain importance sampling from h0 on the remainder
    var0 = np.var(ratio, axis=0, ddof=1)
    state.criteria = [float(problem.weights @ var0 / (schedule.n_max - schedule.n0))]
    state.trace.append(IterationRecord(0, state.alpha.tolist(), state.beta.tolist(),
                                       state.criteria[0], state.n_eval, []))
    return state


def _ce_step(state, problem):
    sample = WeightedSample(state.points, state.history_logpdf(), state.phi, state.log_f)
    K = _family_size(state.family)
    lambdas = []
    for j in range(problem.J):
        if K == 1:
            lambdas.append(gaussian_ce_update(sample, j))
        else:
            lambdas.append(mixture_ce_update(sample, j, K, rng=stream(state.seed, _EM, state.k, j)))
    return lambdas, sample.history_logpdf


def _alpha_objective(problem, state, log_h, comp_log, beta):
    """Objective data on the history: a_n and c_nj as density ratios to h."""
    target = state.phi * log_ratio(state.log_f, log_h[:, None])
    control = log_ratio(comp_log, log_h[:, None])
    resid = target - beta * control
    a = (resid * resid) @ problem.weights
    return AlphaObjective.from_scaled(a, control)


def _batch_criterion(problem, phi, log_f, comp_log, log_g, beta, remaining):
    target = phi * log_ratio(log_f, log_g[:, None])
    control = log_ratio(comp_log, log_g[:, None])
    var = np.var(target - beta * control, axis=0, ddof=1)
    if remaining <= 0:
        return np.inf
    return float(problem.weights @ var / remaining)


def iterate(state: AdaptiveState, problem: EstimationProblem):
    """One adaptation step: refit the auxiliary densities, alpha, sample a batch, refit beta."""
    sched = state.schedule
    if not state.n_eval < sched.n_max / 2:
        raise ValueError("no budget left for adaptation (N_eval >= N_max / 2)")
    k = state.k + 1
    state.k = k
    try:
        lambdas, log_h = _ce_step(state, problem)
        comp_log = np.column_stack([g.logpdf(state.points) for g in lambdas])
        obj = _alpha_objective(problem, state, log_h, comp_log, state.beta)
        alpha = minimize_alpha(obj, state.alpha)
    except NumericalError as exc:
        raise type(exc)(f"iteration {k}: {exc}") from exc

    g_alpha = MixtureDensity(lambdas, alpha)
    x_new = g_alpha.sample(sched.n_k, stream(state.seed, _ITER, k))
    phi_new = problem.evaluate(x_new)
    log_f_new = problem.log_input_pdfs(x_new)
    comp_new = np.column_stack([g.logpdf(x_new) for g in lambdas])
    log_g_new = logsumexp(comp_new + np.log(alpha), axis=1)

    # extend the generator table: old generators on new points, new generator everywhere
    old_on_new = np.column_stack([
        log_f_new[:, 0] if (i == 0 and problem.shared_input) else gen.logpdf(x_new)
        for i, gen in enumerate(state.generators)])
    new_on_old = logsumexp(comp_log + np.log(alpha), axis=1)
    state.gen_logpdf = np.vstack([
        np.column_stack([state.gen_logpdf, new_on_old]),
        np.column_stack([old_on_new, log_g_new])])
    state.points = np.vstack([state.points, x_new])
    state.phi = np.vstack([state.phi, phi_new])
    state.log_f = np.vstack([state.log_f, log_f_new])
    state.sizes.append(sched.n_k)
    state.generators.append(g_alpha)

    target = phi_new * log_ratio(log_f_new, log_g_new[:, None])
    control = log_ratio(comp_new, log_g_new[:, None])
    beta = state.beta.copy()
    for j in range(problem.J):
        try:
            beta[j] = beta_from_ratios(target[:, j], control[:, j])
        except DegenerateControl:
            # control equals the sampling density: beta has no effect on the estimate
            logger.debug("iteration %d: degenerate control for target %d, keeping beta", k, j)

    state.lambdas, state.alpha, state.beta = lambdas, alpha, beta
    crit = _batch_criterion(problem, phi_new, log_f_new, comp_new, log_g_new, beta, state.remaining)
    state.criteria.append(crit)
    state.trace.append(IterationRecord(k, alpha.tolist(), beta.tolist(), crit, state.n_eval,
                                       [_lambda_mean(g) for g in lambdas]))
    return state


def stopping_check(state: AdaptiveState):
    """True when the last adaptation step did not lower the projected final criterion.

    Compares ``criterion(k-1) <= criterion(k)``, each side being the weighted
    integrand-variance sum on its own batch divided by the budget that would
    remain for the final sample.
    """
    if state.k < 1:
        raise ValueError("stopping check needs at least one iteration")
    if state.remaining <= 0:
        state.stop_reason = "budget"
        return True
    prev, cur = state.criteria[-2], state.criteria[-1]
    return bool(prev <= cur)


def estimate_with_parameters(problem: EstimationProblem, sampling: Density, controls, beta, n, rng):
    """Control-variate estimates of every target on a fresh ``n``-sample from ``sampling``.

    ``controls[j]`` is the control density of target ``j`` and ``beta[j]`` its
    coefficient. Returns one :class:`CvEstimate` per target.
    """
    if n < 2:
        raise ValueError("final stage needs at least two points")
    x = sampling.sample(n, rng)
    phi = problem.evaluate(x)
    log_f = problem.log_input_pdfs(x)
    log_g = sampling.logpdf(x)
    comp = np.column_stack([c.logpdf(x) for c in controls])
    target = phi * log_ratio(log_f, log_g[:, None])
    control = log_ratio(comp, log_g[:, None])
    beta = np.asarray(beta, dtype=float)
    integrand = target - beta * control
    values = integrand.mean(axis=0) + beta
    variances = np.var(integrand, axis=0, ddof=1)
    return [CvEstimate(float(v), float(s), n) for v, s in zip(values, variances)]


def finalize(state: AdaptiveState, problem: EstimationProblem):
    """Spend the remaining budget on an independent sample and return the estimates."""
    n_f = state.remaining
    if n_f < 2:
        raise NumericalError("final sample would have fewer than two points")
    if state.lambdas is None:
        raise ValueError("finalize needs at least one adaptation step")
    ests = estimate_with_parameters(problem, state.sampling_density(), state.lambdas, state.beta,
                                    n_f, stream(state.seed, _FINAL))
    n_calls = problem.n_calls - state.calls_at_start
    expected = state.schedule.n_max * (problem.J if problem._per_target is not None
                                       else problem.calls_per_point)
    if n_calls != expected:
        raise BudgetError(f"run used {n_calls} model calls, expected {expected}")
    return RunReport(
        estimates=np.array([e.value for e in ests]),
        integrand_variances=np.array([e.integrand_variance for e in ests]),
        n_final=n_f,
        iterations=state.k,
        stop_reason=state.stop_reason,
        trace=[r.as_dict() for r in state.trace],
        n_calls=n_calls,
        initial_estimates=state.initial_estimates,
    )


def run(problem: EstimationProblem, n_max, n_k=None, n0=None, seed=0, h0_mode="uniform",
        family="gaussian"):
    """Full adaptive run with a stationary schedule (default ``n_k = n0 = n_max // 10``)."""
    n_k = n_max // 10 if n_k is None else n_k
    n0 = n_k if n0 is None else n0
    schedule = BudgetSchedule(n_max, n_k, n0)
    state = initialize(problem, schedule, h0_mode=h0_mode, seed=seed, family=family)
    while state.n_eval < schedule.n_max / 2:
        iterate(state, problem)
        if stopping_check(state):
            state.stop_reason = state.stop_reason or "criterion"
            break
    else:
        state.stop_reason = "budget"
    return finalize(state, problem)
