"""Command-line harness: ``hamdrift <experiment> [flags]``.

Experiments: trace, strong, weak, mlmc, step.  Flags mirror the key-value
config file format; ``--config FILE`` loads defaults that explicit flags
override.  Output is CSV (``--output -`` for stdout); every file records its
own configuration in ``#`` header lines.

Exit codes: 0 success, 2 invalid configuration or usage, 3 solver divergence.
"""

from __future__ import annotations

import argparse
import sys

from .experiments import (ExperimentConfig, config_from_key_values,
                          parse_config_text, run_experiment, EXPERIMENTS)
from .integrators import SolverDiverged


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hamdrift",
        description="Integrators and estimators for separable Hamiltonian "
                    "systems with additive noise.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="key-value config file with defaults")
        p.add_argument("--problem",
                       help="oscillator | pendulum | double-well | henon-heiles")
        p.add_argument("--scheme",
                       help="comma-separated schemes: dp,em,bem,stm,symp,split")
        p.add_argument("--h", help="step size, or comma-separated decreasing list")
        p.add_argument("--n-steps", type=int, help="number of steps (alternative to --h)")
        p.add_argument("--t-end", help="final time T")
        p.add_argument("--samples", help="Monte Carlo sample count M")
        p.add_argument("--seed", help="base seed for all random streams")
        p.add_argument("--levels", help="top multilevel level L")
        p.add_argument("--epsilon", help="multilevel schedule exponent parameter")
        p.add_argument("--mode", help="weak experiment mode: exact | mc")
        p.add_argument("--reference-scheme", help="scheme for reference runs")
        p.add_argument("--h-ref", help="reference step size")
        p.add_argument("--functional",
                       help="estimated functional: energy, q, p, q2, p2 "
                            "(optionally with _<index>)")
        p.add_argument("--solver", help="implicit solver: fixed_point | newton")
        p.add_argument("--solver-tol", help="implicit solver tolerance")
        p.add_argument("--dw", help="explicit noise increment for step (comma list)")
        p.add_argument("--sigma", help="noise amplitude override")
        p.add_argument("--alpha", help="henon-heiles coupling override")
        p.add_argument("--scale", help="pendulum nonlinearity scale override")
        p.add_argument("--output", default="-",
                       help="output CSV path, '-' for stdout (default)")
    return parser


_FLAG_KEYS = ("problem", "scheme", "h", "n_steps", "t_end", "samples", "seed",
              "levels", "epsilon", "mode", "reference_scheme", "h_ref",
              "functional", "solver", "solver_tol", "dw", "sigma", "alpha",
              "scale")


def _config_from_args(args) -> ExperimentConfig:
    pairs = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            pairs.update(parse_config_text(fh.read()))
    for key in _FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            pairs[key] = str(value)
    pairs["experiment"] = args.experiment
    return config_from_key_values(pairs)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
    except (ValueError, OSError) as exc:
        print(f"hamdrift: invalid configuration: {exc}", file=sys.stderr)
        return 2
    try:
        run_experiment(cfg, output=args.output)
    except SolverDiverged as exc:
        print(f"hamdrift: solver diverged: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"hamdrift: invalid configuration: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
