"""Command-line entry points: gen-data, train, compare, diagnose.

Exit codes: 0 success, 1 divergence or failed diagnostic check, 2 config or
parameter error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import diagnostics
from .data import IngestionError, SyntheticSpec, generate_synthetic, save_csv
from .harness import (
    ConfigError,
    compare,
    list_presets,
    load_config,
    run_experiment,
    summary_to_csv,
    summary_to_text,
    time_to_within,
)
from .streams import DIAGNOSTICS, stream

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def _cmd_gen_data(args) -> int:
    spec = SyntheticSpec(args.n, args.d, args.noise, args.split, args.seed)
    dataset = generate_synthetic(spec)
    save_csv(dataset, args.out)
    print(f"wrote {dataset.n} rows ({dataset.train_indices.size} train / "
          f"{dataset.val_indices.size} val, d={dataset.d}) to {args.out}")
    return EXIT_OK


def _train_overrides(args) -> dict:
    overrides = {}
    if args.trials is not None:
        overrides["run.trials"] = str(args.trials)
    if args.out is not None:
        overrides["run.out"] = args.out
    if args.label is not None:
        overrides["run.label"] = args.label
    if args.deterministic:
        overrides["train.deterministic"] = "true"
    return overrides


def _cmd_train(args) -> int:
    if args.config is None and args.preset is None:
        raise ConfigError("train needs --config and/or --preset")
    config = load_config(args.config, preset=args.preset, overrides=_train_overrides(args))
    agg = run_experiment(config, mask_time=args.mask_time)
    final = agg.means["val_acc"][-1]
    print(f"{agg.label}: {len(agg.trial_records)} trial(s) complete, "
          f"final val_acc {final:.4f}, outputs in {Path(config.out_dir) / config.label}")
    for records in agg.trial_records:
        metric = time_to_within(records)
        print(f"  epochs to final-1%: {metric.epochs_to_threshold} "
              f"({metric.seconds_to_threshold:.2f}s)")
    if agg.failed_trials:
        print(f"  warning: {agg.failed_trials} trial(s) diverged or stopped early")
        return EXIT_FAILURE
    return EXIT_OK


def _cmd_compare(args) -> int:
    configs = []
    for token in args.configs.split(","):
        token = token.strip()
        if token.startswith("preset:"):
            configs.append(load_config(preset=token[len("preset:"):],
                                       overrides={"run.out": args.out} if args.out else None))
        else:
            configs.append(load_config(token,
                                       overrides={"run.out": args.out} if args.out else None))
    rows = compare(configs, mask_time=args.mask_time)
    print(summary_to_text(rows), end="")
    out_dir = Path(args.out if args.out else configs[0].out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_path = out_dir / "summary.csv"
    summary_path.write_text(summary_to_csv(rows))
    print(f"summary written to {summary_path}")
    return EXIT_OK


def _diagnose_checks(suite: str):
    """Yield (name, passed, detail) for the requested suite."""
    if suite in ("grad", "all"):
        for family in ("logistic", "mlp", "quadratic"):
            report = diagnostics.finite_diff_check(family, trials=100, step=1e-5, tol=1e-5)
            yield (f"grad.{family}", report.passed,
                   f"max rel err {report.max_rel_error:.3e} over {report.trials} trials")
    if suite in ("lemma", "all"):
        rng = stream(2024, DIAGNOSTICS, 10)
        anchors = rng.standard_normal((256, 8))
        for delta in (0.1, 0.5, 1.0):
            for i in range(5):
                theta = rng.standard_normal(8)
                report = diagnostics.one_step_bound_check(
                    anchors, theta, eta=0.01, delta=delta, num_samples=100_000, seed=100 + i)
                yield (f"lemma.delta_{delta}.theta_{i}", report.passed,
                       f"lhs {report.empirical_lhs:.6f} <= rhs {report.bound_rhs:.6f} "
                       f"+ ci {report.ci_halfwidth:.2e} (m={report.batch_size})")
    if suite in ("bounds", "all"):
        rng = stream(2024, DIAGNOSTICS, 11)
        anchors = rng.standard_normal((512, 256))
        for alpha in (0.1, 0.5, 1.0):
            report = diagnostics.fixed_step_bound_check(anchors, alpha, T=2000, seeds=64)
            yield (f"bounds.fixed_alpha_{alpha}", report.passed,
                   f"{report.violations} prefix violations over T={report.steps[-1]}")
        small = 0.02 * stream(2024, DIAGNOSTICS, 12).standard_normal((128, 4))
        center = small.mean(axis=0)
        report = diagnostics.diminishing_step_check(
            small, alpha0=0.5, c=0.01, T=5000, seeds=64,
            theta_init=center + 0.1 / np.sqrt(4) * np.ones(4))
        yield ("bounds.diminishing", report.passed,
               f"weighted avg {report.details['weighted_avg_at_T']:.3e} at T vs "
               f"{report.details['weighted_avg_at_T_tenth']:.3e} at T/10, "
               f"threshold {report.details['threshold']:.0e}")


def _cmd_diagnose(args) -> int:
    results = list(_diagnose_checks(args.suite))
    width = max(len(name) for name, _, _ in results)
    for name, passed, detail in results:
        print(f"{name.ljust(width)}  {'PASS' if passed else 'FAIL'}  {detail}")
    failed = sum(1 for _, passed, _ in results if not passed)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    report_lines = []
    for name, passed, detail in results:
        report_lines.append(f"{name}.passed={str(passed).lower()}")
        report_lines.append(f"{name}.detail={detail}")
    Path(args.out).write_text("\n".join(report_lines) + "\n")
    print(f"report written to {args.out}")
    return EXIT_OK if failed == 0 else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="divebatch",
        description="Adaptive-batch-size SGD driven by gradient diversity",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate the synthetic dataset as CSV")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--d", type=int, required=True)
    gen.add_argument("--noise", type=float, default=0.1)
    gen.add_argument("--split", type=float, default=0.8)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_gen_data)

    tr = sub.add_parser("train", help="run a multi-trial training experiment")
    tr.add_argument("--config", help="path to a key=value config file")
    tr.add_argument("--preset", choices=list_presets(), help="named preset as the base config")
    tr.add_argument("--trials", type=int)
    tr.add_argument("--deterministic", action="store_true")
    tr.add_argument("--out")
    tr.add_argument("--label")
    tr.add_argument("--mask-time", action="store_true",
                    help="write 0 in the wall_time_s column (golden-file mode)")
    tr.set_defaults(func=_cmd_train)

    cp = sub.add_parser("compare", help="run several configs on one dataset and tabulate")
    cp.add_argument("--configs", required=True,
                    help="comma-separated config paths; 'preset:<name>' also accepted")
    cp.add_argument("--out")
    cp.add_argument("--mask-time", action="store_true")
    cp.set_defaults(func=_cmd_compare)

    dg = sub.add_parser("diagnose", help="run the verification suites")
    dg.add_argument("--suite", choices=("grad", "lemma", "bounds", "all"), default="all")
    dg.add_argument("--out", default="diagnostics_report.txt")
    dg.set_defaults(func=_cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, IngestionError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
