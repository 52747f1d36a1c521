"""Seeded replication studies of the three benchmark problems.

An experiment runs ``n_rep`` independent replications of the adaptive
estimator and of the baselines relevant to its problem, all with the same
model-call budget, and gathers the estimates in a :class:`ResultTable`.
Outputs are written as CSV and JSON into a directory named after the
configuration hash; identical configurations produce identical files.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import adaptive
from .adaptive import stream
from .applications import (M_SOB, build_param_sensitivity_problem, cantilever_density,
                           cantilever_response, cantilever_sobol_problem, moments_problem,
                           sobol_from_expectations)
from .errors import BudgetError, ConfigError
from .estimators import (EstimationProblem, mc_mixture_baseline, mc_mixture_calls,
                         naive_mc_baseline, naive_mc_calls)

logger = logging.getLogger(__name__)

EXPERIMENTS = ("moments", "sobol-cantilever", "param-sensitivity")
ADAPTIVE = "ME-aISCV"
METHODS = {
    "moments": ("MC", ADAPTIVE),
    "sobol-cantilever": ("PF", ADAPTIVE),
    "param-sensitivity": ("nMC", "MCmixt", ADAPTIVE),
}

# (section, key, type) for every configuration field, in file order
_LAYOUT = (
    ("experiment", "name", str),
    ("experiment", "J", int),
    ("budget", "n_max", int),
    ("budget", "n_k", int),
    ("budget", "n0", int),
    ("replication", "n_rep", int),
    ("replication", "seed", int),
    ("replication", "workers", int),
    ("method", "h0_mode", str),
    ("method", "family", str),
    ("method", "weight_mode", str),
    ("design", "design_seed", int),
    ("output", "out", str),
    ("output", "references", str),
)
_FIELD = {"name": "experiment"}


def _parse_int(raw):
    """Integer from ``"20000"`` or ``"2e4"``; large seeds stay exact."""
    try:
        return int(raw)
    except ValueError:
        x = float(raw)
        if not x.is_integer():
            raise
        return int(x)


@dataclass
class ExperimentConfig:
    experiment: str
    J: int = 0
    n_max: int = 20000
    n_k: int = 2000
    n0: int = 0
    n_rep: int = 200
    seed: int = 0
    workers: int = 1
    h0_mode: str = "uniform"
    family: str = "gaussian"
    weight_mode: str = "unit"
    design_seed: int = 2023
    out: str = "results"
    references: str = ""

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.J == 0:
            self.J = {"moments": 10, "sobol-cantilever": 8, "param-sensitivity": 100}[self.experiment]
        if self.n0 == 0:
            self.n0 = self.n_k
        self.validate()

    def validate(self):
        if self.n_rep < 1:
            raise ConfigError("n_rep must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned value")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if min(self.n_max, self.n_k, self.n0) < 1 or self.n0 + self.n_k > self.n_max / 2:
            raise ConfigError("budget must satisfy n0 + n_k <= n_max / 2")
        if self.h0_mode not in ("uniform", "weighted"):
            raise ConfigError("h0_mode must be 'uniform' or 'weighted'")
        if not (self.family == "gaussian" or (self.family.startswith("mixture-")
                                              and self.family[8:].isdigit()
                                              and int(self.family[8:]) >= 1)):
            raise ConfigError("family must be 'gaussian' or 'mixture-K'")
        if self.weight_mode not in ("unit", "inverse-square-target"):
            raise ConfigError("weight_mode must be 'unit' or 'inverse-square-target'")
        if self.weight_mode == "inverse-square-target" and self.experiment != "moments":
            raise ConfigError("inverse-square-target weights need analytic targets (moments only)")
        if self.experiment == "moments" and self.J < 2:
            raise ConfigError("moments needs J >= 2")
        if self.experiment == "sobol-cantilever" and self.J != 8:
            raise ConfigError("sobol-cantilever has exactly J = d + 2 = 8 targets")
        if self.experiment == "param-sensitivity" and self.J < 2:
            raise ConfigError("param-sensitivity needs J >= 2")

    # -- serialization -------------------------------------------------

    def to_ini(self):
        parser = configparser.ConfigParser()
        parser.optionxform = str
        for section, key, _ in _LAYOUT:
            if not parser.has_section(section):
                parser.add_section(section)
            parser.set(section, key, str(getattr(self, _FIELD.get(key, key))))
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text):
        parser = configparser.ConfigParser()
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        known = {(s, k) for s, k, _ in _LAYOUT}
        for section in parser.sections():
            for key in parser[section]:
                if (section, key) not in known:
                    raise ConfigError(f"unknown config key [{section}] {key}")
        kwargs = {}
        for section, key, typ in _LAYOUT:
            if parser.has_option(section, key):
                raw = parser.get(section, key)
                try:
                    kwargs[_FIELD.get(key, key)] = _parse_int(raw) if typ is int else raw
                except ValueError as exc:
                    raise ConfigError(f"[{section}] {key}: expected {typ.__name__}, got {raw!r}") from exc
        if "experiment" not in kwargs:
            raise ConfigError("config needs [experiment] name")
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_ini(text)

    def config_hash(self):
        # the output location does not change the results
        fields = dataclasses.asdict(self)
        fields.pop("out")
        fields.pop("workers")
        blob = json.dumps(fields, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def replace(self, **changes):
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})


@dataclass
class ResultTable:
    """Replication estimates of every method, plus budget audit records."""

    config: ExperimentConfig
    target_names: list
    weights: np.ndarray
    estimates: dict
    references: np.ndarray = None
    reference_se: np.ndarray = None
    budget: list = field(default_factory=list)
    stop_iterations: list = field(default_factory=list)
    stop_reasons: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def methods(self):
        return list(self.estimates)

    def variances(self, method):
        est = self.estimates[method]
        if est.shape[0] < 2:
            return None
        return est.var(axis=0, ddof=1)

    def criterion(self, method):
        """``sum_j w_j Var(I_j)`` across replications, or None with a single replication."""
        v = self.variances(method)
        return None if v is None else float(self.weights @ v)

    def stop_histogram(self):
        counts = {}
        for k in self.stop_iterations:
            counts[str(k)] = counts.get(str(k), 0) + 1
        return dict(sorted(counts.items(), key=lambda kv: int(kv[0])))

    def summary(self):
        return {
            "experiment": self.config.experiment,
            "config_hash": self.config.config_hash(),
            "seed": self.config.seed,
            "n_rep": self.config.n_rep,
            "n_max": self.config.n_max,
            "targets": self.target_names,
            "criterion": {m: self.criterion(m) for m in self.methods},
            "variance": {m: (None if self.variances(m) is None else self.variances(m).tolist())
                         for m in self.methods},
            "mean": {m: self.estimates[m].mean(axis=0).tolist() for m in self.methods},
            "stop_iterations": self.stop_histogram(),
            "stop_reasons": {r: self.stop_reasons.count(r) for r in sorted(set(self.stop_reasons))},
            "budget_ok": all(b["calls"] == b["expected"] for b in self.budget),
            "references": None if self.references is None else self.references.tolist(),
        }


# ---------------------------------------------------------------------------
# experiment definitions


def _rep_seed(config, rep, method_index):
    return np.random.SeedSequence(config.seed, spawn_key=(rep, method_index))


class _Moments:
    def __init__(self, config):
        self.config = config
        probe = moments_problem(config.J)
        self.names = probe.names
        self.references = probe.references
        self.reference_se = np.zeros(config.J)
        self.weights = (probe.weights if config.weight_mode == "inverse-square-target"
                        else np.ones(config.J))

    def problem(self):
        prob = moments_problem(self.config.J)
        prob.weights = self.weights.copy()
        return prob

    def expected_calls(self):
        return self.config.n_max

    def replicate(self, rep):
        c = self.config
        prob = self.problem()
        mc = mc_mixture_baseline(prob, c.n_max, np.random.default_rng(_rep_seed(c, rep, 0)))
        out = {"MC": (mc, prob.n_calls)}
        prob.reset_calls()
        report = _adaptive_run(prob, c, _rep_seed(c, rep, 1))
        out[ADAPTIVE] = (report.estimates, prob.n_calls, report)
        return out


class _Sobol:
    def __init__(self, config):
        self.config = config
        sp = cantilever_sobol_problem()
        self.d = sp.d
        self.names = [f"S{i + 1}" for i in range(self.d)]
        self.weights = np.ones(self.d)
        self.references = self.reference_se = None
        ref = _load_references(config, "sobol-cantilever")
        if ref is not None:
            self.references = np.array(ref["values"])
            self.reference_se = np.array(ref["standard_errors"])

    def expected_calls(self):
        return self.config.n_max * (self.d + 1)

    def replicate(self, rep):
        c = self.config
        sp = cantilever_sobol_problem()
        prob = sp.problem
        pf = mc_mixture_baseline(prob, c.n_max, np.random.default_rng(_rep_seed(c, rep, 0)))
        pf_calls = sp.phi.calls
        if pf_calls != prob.n_calls:
            raise BudgetError("Pick-Freeze base-model calls disagree with the problem counter")
        out = {"PF": (sobol_from_expectations(pf), pf_calls)}
        sp.phi.calls = 0
        prob.reset_calls()
        report = _adaptive_run(prob, c, _rep_seed(c, rep, 1))
        if sp.phi.calls != prob.n_calls:
            raise BudgetError("adaptive base-model calls disagree with the problem counter")
        out[ADAPTIVE] = (sobol_from_expectations(report.estimates), sp.phi.calls, report)
        return out


class _ParamSensitivity:
    def __init__(self, config):
        self.config = config
        self.design = build_param_sensitivity_problem(config.J, stream(config.design_seed, 0))
        self.names = self.design.problem.names
        self.weights = np.ones(config.J)
        self.references = self.reference_se = None
        ref = _load_references(config, "param-sensitivity")
        if ref is not None:
            if not np.allclose(ref["params"], self.design.params, rtol=0, atol=0):
                raise ConfigError("cached references were computed for a different parameter design")
            self.references = np.array(ref["values"])
            self.reference_se = np.array(ref["standard_errors"])

    def expected_calls(self):
        return self.config.n_max

    def problem(self):
        return EstimationProblem(cantilever_response, self.design.densities, self.weights,
                                 names=self.names)

    def replicate(self, rep):
        c = self.config
        prob = self.problem()
        nmc = naive_mc_baseline(prob, c.n_max, np.random.default_rng(_rep_seed(c, rep, 0)))
        out = {"nMC": (nmc, prob.n_calls, None, naive_mc_calls(prob, c.n_max))}
        prob.reset_calls()
        mix = mc_mixture_baseline(prob, c.n_max, np.random.default_rng(_rep_seed(c, rep, 2)))
        out["MCmixt"] = (mix, prob.n_calls, None, mc_mixture_calls(prob, c.n_max))
        prob.reset_calls()
        report = _adaptive_run(prob, c, _rep_seed(c, rep, 1))
        out[ADAPTIVE] = (report.estimates, prob.n_calls, report)
        return out


_DEFINITIONS = {"moments": _Moments, "sobol-cantilever": _Sobol,
                "param-sensitivity": _ParamSensitivity}


def _adaptive_run(problem, config, seed):
    return adaptive.run(problem, config.n_max, n_k=config.n_k, n0=config.n0, seed=seed,
                        h0_mode=config.h0_mode, family=config.family)


def _load_references(config, experiment):
    if not config.references:
        return None
    path = Path(config.references)
    if not path.exists():
        logger.warning("reference file %s not found; running without references", path)
        return None
    data = json.loads(path.read_text(encoding="utf-8"))
    if data.get("experiment") != experiment:
        raise ConfigError(f"{path} holds references for {data.get('experiment')!r}")
    return data


def run_experiment(config: ExperimentConfig, write=True):
    """Run every replication and return (and by default write) the result table."""
    definition = _DEFINITIONS[config.experiment](config)
    methods = METHODS[config.experiment]
    expected = definition.expected_calls()
    start = time.perf_counter()
    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            reps = list(pool.map(definition.replicate, range(config.n_rep)))
    else:
        reps = [definition.replicate(r) for r in range(config.n_rep)]
    table = ResultTable(
        config=config,
        target_names=list(definition.names),
        weights=np.asarray(definition.weights, dtype=float),
        estimates={m: np.array([r[m][0] for r in reps]) for m in methods},
        references=definition.references,
        reference_se=definition.reference_se,
        wall_time=time.perf_counter() - start,
    )
    for rep, result in enumerate(reps):
        for m in methods:
            entry = result[m]
            exp = entry[3] if len(entry) > 3 else expected
            table.budget.append({"method": m, "replication": rep, "calls": int(entry[1]),
                                 "expected": int(exp)})
            if entry[1] != exp:
                raise BudgetError(f"{m} replication {rep} used {entry[1]} calls, expected {exp}")
        report = result[ADAPTIVE][2]
        table.stop_iterations.append(report.iterations)
        table.stop_reasons.append(report.stop_reason)
    if write:
        write_results(table)
    return table


# ---------------------------------------------------------------------------
# output


def results_dir(config: ExperimentConfig):
    return Path(config.out) / f"{config.experiment}-{config.config_hash()}"


def _fmt(x):
    return repr(float(x))


def write_results(table: ResultTable, directory=None):
    """Write config, estimates, budget audit, boxplot data and summary; return the directory."""
    directory = Path(directory) if directory is not None else results_dir(table.config)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.ini").write_text(table.config.to_ini(), encoding="utf-8")
    with open(directory / "estimates.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "target", "replication", "estimate"])
        for m in table.methods:
            for rep, row in enumerate(table.estimates[m]):
                for name, value in zip(table.target_names, row):
                    w.writerow([m, name, rep, _fmt(value)])
    with open(directory / "budget.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "replication", "model_calls", "expected", "ok"])
        for b in table.budget:
            w.writerow([b["method"], b["replication"], b["calls"], b["expected"],
                        b["calls"] == b["expected"]])
    emit_boxplot_data(table, directory / "boxplot.csv")
    summary = table.summary()
    (directory / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                            encoding="utf-8")
    # wall time is kept out of the JSON/CSV outputs so those stay reproducible
    (directory / "run.log").write_text(f"wall_time_seconds {table.wall_time:.3f}\n",
                                       encoding="utf-8")
    return directory


def emit_boxplot_data(table: ResultTable, path):
    """Long-format CSV (method, target, replication, estimate) plus reference rows."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "target", "replication", "estimate"])
        for m in table.methods:
            for j, name in enumerate(table.target_names):
                for rep, value in enumerate(table.estimates[m][:, j]):
                    w.writerow([m, name, rep, _fmt(value)])
        if table.references is not None:
            for name, value in zip(table.target_names, table.references):
                w.writerow(["reference", name, "", _fmt(value)])
    return path


# ---------------------------------------------------------------------------
# references


REFERENCE_SIZES = {"sobol-cantilever": 10**7, "param-sensitivity": 10**6}


def make_references(experiment, n=None, seed=0, config: ExperimentConfig = None, batches=10):
    """Crude Monte Carlo references with standard errors from ``batches`` independent batches.

    ``n`` is the number of (augmented) points per reference value; it defaults
    to ``REFERENCE_SIZES[experiment]``.
    """
    n = REFERENCE_SIZES.get(experiment) if n is None else n
    if experiment == "moments":
        prob = moments_problem((config.J if config else 10))
        return {"experiment": experiment, "values": prob.references.tolist(),
                "standard_errors": [0.0] * prob.J, "n": None, "seed": None,
                "method": "analytic"}
    if n % batches:
        raise ConfigError("n must be divisible by the number of batches")
    m = n // batches
    if experiment == "sobol-cantilever":
        sp = cantilever_sobol_problem()
        per_batch = []
        for b in range(batches):
            rng = stream(seed, b)
            e = np.zeros(sp.d + 2)
            for lo in range(0, m, 100_000):
                k = min(100_000, m - lo)
                e += sp.problem.evaluate(sp.augmented_density.sample(k, rng)).sum(axis=0)
            per_batch.append(sobol_from_expectations(e / m))
        per_batch = np.array(per_batch)
        return {"experiment": experiment, "values": per_batch.mean(axis=0).tolist(),
                "standard_errors": (per_batch.std(axis=0, ddof=1) / np.sqrt(batches)).tolist(),
                "n": n, "seed": seed, "method": "pick-freeze crude Monte Carlo",
                "m_sob": list(M_SOB)}
    if experiment == "param-sensitivity":
        config = config or ExperimentConfig("param-sensitivity")
        design = build_param_sensitivity_problem(config.J, stream(config.design_seed, 0))
        values, ses = [], []
        for j, f in enumerate(design.densities):
            rng = stream(seed, j)
            sums = np.zeros(batches)
            for b in range(batches):
                for lo in range(0, m, 200_000):
                    k = min(200_000, m - lo)
                    sums[b] += cantilever_response(f.sample(k, rng)).sum()
            means = sums / m
            values.append(float(means.mean()))
            ses.append(float(means.std(ddof=1) / np.sqrt(batches)))
        return {"experiment": experiment, "values": values, "standard_errors": ses, "n": n,
                "seed": seed, "method": "crude Monte Carlo per distribution",
                "design_seed": config.design_seed, "params": design.params.tolist()}
    raise ConfigError(f"unknown experiment {experiment!r}")


def write_references(data, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_summary(directory):
    path = Path(directory) / "summary.json"
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"no results in {directory}: {exc}") from exc
