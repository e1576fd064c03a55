"""Command-line front end.

Verbs: train, ablate, noise, motivate, curves, tabular-verify. Defaults match
the reference hyperparameter table; exit codes are one category per error
class (see EXIT_CODES).
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import (
    ConfigError,
    CoverageError,
    DimensionError,
    FormatError,
    NumericError,
    StateError,
    UnknownEnvError,
)
from .harness import (
    ExperimentPlan,
    emit_learning_curves,
    run_ablation_suite,
    run_experiment,
    run_motivating_example,
    run_noise_suite,
    verify_tabular,
)

EXIT_CODES = {
    "ok": 0,
    "other": 1,
    "config": 2,
    "lookup": 3,
    "io": 4,
    "numeric": 5,
}


def _classify(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, DimensionError, StateError)):
        return EXIT_CODES["config"]
    if isinstance(exc, (UnknownEnvError, CoverageError)):
        return EXIT_CODES["lookup"]
    if isinstance(exc, (FormatError, OSError)):
        return EXIT_CODES["io"]
    if isinstance(exc, NumericError):
        return EXIT_CODES["numeric"]
    return EXIT_CODES["other"]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--env", default="pendulum", help="environment name")
    p.add_argument("--seeds", default="0,1,2,3,4",
                   help="comma-separated seed list (default 0,1,2,3,4)")
    p.add_argument("--steps", type=int, default=30_000, help="total env steps")
    p.add_argument("--gate", default="adaptive",
                   choices=("adaptive", "fixed_on", "off"), help="gate mode")
    p.add_argument("--sigma", type=float, default=0.0, help="action-noise std")
    p.add_argument("--tau", type=float, default=0.9, help="expectile factor")
    p.add_argument("--lambda", dest="lam", type=float, default=0.001,
                   help="behavior-clone weight")
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("--config", default=None, help="JSON plan file (overrides flags)")
    p.add_argument("--name", default=None, help="experiment name")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel seed processes (seeds are isolated runs)")
    p.add_argument("--override", action="append", default=[],
                   metavar="KEY=VALUE", help="extra agent config override")


def _plan_from_args(args) -> ExperimentPlan:
    if args.config is not None:
        return ExperimentPlan.from_file(args.config)
    overrides = {"tau": args.tau, "lam": args.lam}
    for item in args.override:
        if "=" not in item:
            raise ConfigError(f"--override expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key] = json.loads(value) if value and value[0] in "[{0123456789-tf" else value
    seeds = [int(s) for s in str(args.seeds).split(",") if s != ""]
    return ExperimentPlan(
        name=args.name or f"{args.env}",
        env=args.env,
        seeds=seeds,
        steps=args.steps,
        out=args.out,
        sigma=args.sigma,
        overrides=overrides,
    )


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="offboost",
        description="Off-policy actor-critic with an adaptive offline-value "
                    "constraint, plus its exact tabular oracle.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    for verb, text in (
        ("train", "run one experiment (all seeds) with the configured gate mode"),
        ("ablate", "run the adaptive / fixed_on / off gate comparison"),
        ("motivate", "no-gate run with concurrent offline values; reports when they lead"),
    ):
        _add_common(sub.add_parser(verb, help=text))

    noise = sub.add_parser("noise", help="action-noise robustness grid and decline rates")
    _add_common(noise)
    noise.add_argument("--sigmas", default="0,0.05,0.1",
                       help="comma-separated noise grid (must include 0)")
    noise.set_defaults(env="pointmass-sparse")

    curves = sub.add_parser("curves", help="emit tidy plot data from finished runs")
    curves.add_argument("experiment_dir", help="directory <out>/<experiment>")

    tv = sub.add_parser("tabular-verify", help="run the exact-DP property suite")
    tv.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except BrokenPipeError:
        return EXIT_CODES["io"]
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return _classify(e)


def _dispatch(args) -> int:
    if args.verb == "train":
        plan = _plan_from_args(args)
        summary = run_experiment(plan, gate_mode=args.gate, workers=args.workers)
        _report_experiment(summary)
        return EXIT_CODES["ok"] if not summary["failures"] else EXIT_CODES["other"]

    if args.verb == "ablate":
        plan = _plan_from_args(args)
        comparison = run_ablation_suite(plan, workers=args.workers)
        print(f"{'mode':<10} {'final return':>14} {'final success':>14}")
        for mode, row in comparison["modes"].items():
            print(f"{mode:<10} {row['final_eval_return_mean']:>14.3f} "
                  f"{_fmt(row['final_success_rate']):>14}")
        return EXIT_CODES["ok"]

    if args.verb == "noise":
        plan = _plan_from_args(args)
        sigmas = [float(s) for s in str(args.sigmas).split(",")]
        table = run_noise_suite(plan, sigmas, workers=args.workers)
        print(f"{'variant':<8} {'sigma':>6} {'perf':>10} {'decline':>10}")
        for variant, rates in table["decline_rates"].items():
            for sigma in sigmas:
                dr = rates[f"{sigma:g}"]
                print(f"{variant:<8} {sigma:>6g} {table['performance'][variant][sigma]:>10.4f} "
                      f"{'undefined' if dr is None else f'{100 * dr:.2f}%':>10}")
        return EXIT_CODES["ok"]

    if args.verb == "motivate":
        plan = _plan_from_args(args)
        report = run_motivating_example(plan, workers=args.workers)
        print(f"offline-ahead windows (env steps): {report['offline_ahead_windows']}")
        print(f"chain MDP: covered={report['tabular_chain']['covered']} "
              f"offline_dominates={report['tabular_chain']['offline_dominates']}")
        return EXIT_CODES["ok"]

    if args.verb == "curves":
        path = emit_learning_curves(args.experiment_dir)
        print(f"wrote {path}")
        return EXIT_CODES["ok"]

    if args.verb == "tabular-verify":
        results = verify_tabular(seed=args.seed)
        ok = True
        for name, passed, detail in results:
            print(f"[{'PASS' if passed else 'FAIL'}] {name} ({detail})")
            ok = ok and passed
        return EXIT_CODES["ok"] if ok else EXIT_CODES["other"]

    raise ConfigError(f"unknown verb {args.verb!r}")


def _report_experiment(summary: dict) -> None:
    steps = summary["env_steps"]
    returns = summary["series"]["eval_return_mean"]["mean"]
    if steps:
        print(f"final eval return (mean over {summary['n_seeds']} seeds) "
              f"at step {steps[-1]}: {returns[-1]:.3f}")
    for seed, err in summary["failures"].items():
        print(f"seed {seed} FAILED: {err}", file=sys.stderr)


def _fmt(x) -> str:
    import math

    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "-"
    return f"{x:.3f}"


if __name__ == "__main__":
    sys.exit(main())
