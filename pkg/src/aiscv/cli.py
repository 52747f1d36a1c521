"""Command-line entry point: ``aiscv run | make-references | report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, NumericalError
from .experiments import (EXPERIMENTS, ExperimentConfig, load_summary, make_references, results_dir,
                          run_experiment, write_references)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="python -m aiscv", description="Replicated multi-target adaptive "
                                "importance sampling experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment described by an INI config")
    run.add_argument("config")
    run.add_argument("--seed", type=int)
    run.add_argument("--n-rep", type=int)
    run.add_argument("--n-max", type=int)
    run.add_argument("--out")

    ref = sub.add_parser("make-references", help="compute crude Monte Carlo references")
    ref.add_argument("experiment", choices=EXPERIMENTS)
    ref.add_argument("--seed", type=int, default=0)
    ref.add_argument("--n-max", type=int, help="reference sample size (default 1e7 for Sobol', "
                     "1e6 per distribution otherwise)")
    ref.add_argument("--out", help="output JSON path (default references/<experiment>.json)")
    ref.add_argument("--config", help="config supplying J and the design seed")

    rep = sub.add_parser("report", help="print the summary of a results directory")
    rep.add_argument("results_dir")
    return p


def _run(args):
    config = ExperimentConfig.from_file(args.config)
    budget = {}
    if args.n_max is not None:
        # keep the batch sizes at the same fraction of the budget
        scale = args.n_max / config.n_max
        budget = dict(n_max=args.n_max, n_k=max(1, int(config.n_k * scale)),
                      n0=max(1, int(config.n0 * scale)))
    config = config.replace(seed=args.seed, n_rep=args.n_rep, out=args.out, **budget)
    table = run_experiment(config)
    print(f"results written to {results_dir(config)}")
    for m in table.methods:
        crit = table.criterion(m)
        print(f"{m:>10s}  criterion {'unavailable (n_rep < 2)' if crit is None else f'{crit:.4e}'}")


def _make_references(args):
    config = ExperimentConfig.from_file(args.config) if args.config else None
    data = make_references(args.experiment, n=args.n_max, seed=args.seed, config=config)
    path = Path(args.out or f"references/{args.experiment}.json")
    write_references(data, path)
    print(f"references written to {path}")


def _report(args):
    summary = load_summary(args.results_dir)
    print(f"experiment {summary['experiment']}  n_rep {summary['n_rep']}  "
          f"n_max {summary['n_max']}  seed {summary['seed']}")
    for m, crit in summary["criterion"].items():
        print(f"{m:>10s}  criterion {'unavailable' if crit is None else f'{crit:.4e}'}")
    print("stop iterations " + json.dumps(summary["stop_iterations"]))
    print(f"budget ok {summary['budget_ok']}")


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _run, "make-references": _make_references, "report": _report}[args.command]
    try:
        handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
