"""Command-line interface.

Subcommands: ``run`` (execute an experiment), ``compare`` (arm comparison
table), ``chart`` (SVG charts), ``gradcheck`` (finite-difference audit),
``calibrate`` (fit ground-truth bias terms). Exit codes: 0 success,
2 configuration error, 3 numerical failure, 4 analysis error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..errors import AnalysisError, CheckpointError, ConfigError, NumericalError
from .calibrate import calibrate
from .compare import compare_arms, write_comparison_csv
from .config import ExperimentConfig, PRESETS
from .gradcheck import standard_suite

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_ANALYSIS = 4


def _load_config(args) -> ExperimentConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if args.config:
        return ExperimentConfig.from_file(args.config, preset=args.preset,
                                          overrides=overrides)
    return ExperimentConfig.from_text("", preset=args.preset, overrides=overrides)


def _cmd_run(args) -> int:
    from .runner import run_experiment

    config = _load_config(args)
    out = Path(args.out) if args.out else Path(config.values["run.output_dir"]) / config.fingerprint()[:12]
    run_dir = run_experiment(config, out, verbose=not args.quiet)
    print(f"run written to {run_dir}")
    print(f"fingerprint {config.fingerprint()}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    comparison = compare_arms(args.run, method=args.method, resamples=args.resamples)
    out_path = Path(args.run) / "comparison.csv"
    write_comparison_csv(out_path, comparison)
    print(f"comparison written to {out_path}")
    print(f"{'metric':<18} {'bucket':<12} {'% change':>10} {'95% CI':>24} sig")
    for row in comparison.rows:
        if row.pct_change != row.pct_change:  # NaN: no data for this bucket
            continue
        ci = f"[{row.ci_lo:+8.2f}, {row.ci_hi:+8.2f}]"
        sig = "*" if row.significant else ""
        print(f"{row.metric:<18} {row.bucket_lo}:{row.bucket_hi:<7} "
              f"{row.pct_change:>+9.2f}% {ci:>24} {sig}")
    print("\noverall (seed means):")
    for key, value in sorted(comparison.overall.items()):
        print(f"  {key} = {value:.6g}" if isinstance(value, float) else f"  {key} = {value}")
    return EXIT_OK


def _cmd_chart(args) -> int:
    from .charts import emit_charts

    comparison = compare_arms(args.run, method=args.method, resamples=args.resamples)
    out_dir = Path(args.out) if args.out else Path(args.run) / "charts"
    paths = emit_charts(comparison, out_dir)
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    reports, passed = standard_suite(seed=args.seed, h=args.h, tol=args.tol)
    by_component: dict[str, list] = {}
    for r in reports:
        by_component.setdefault(r.component, []).append(r)
    for component, rs in by_component.items():
        worst = max(r.max_rel_err for r in rs)
        status = "ok" if all(r.passed for r in rs) else "FAIL"
        print(f"{component}: max relative error {worst:.3e} [{status}]")
        for r in rs:
            mark = "ok" if r.passed else "FAIL"
            print(f"  {r.tensor:<28} entries={r.entries:<6} "
                  f"rel={r.max_rel_err:.3e} abs={r.max_abs_err:.3e} [{mark}]")
    if not passed:
        print("gradient check FAILED", file=sys.stderr)
        return EXIT_NUMERICAL
    print("all gradients verified")
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    config = _load_config(args)
    result = calibrate(config.env_config(), n_serves=args.serves, seed=args.seed)
    print(json.dumps(result, indent=2, sort_keys=True))
    print(f"\nachieved like rate: {result['marginals']['like']:.4%} "
          f"(target {0.01:.2%})")
    print("suggested config lines:")
    print(f"  env.like_bias = {result['like_bias']!r}")
    print(f"  env.share_bias = {result['share_bias']!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epinet-bandit",
        description="Cold-start bandit experiments with epinet Thompson sampling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="config file (flat key = value lines)")
        p.add_argument("--preset", choices=sorted(PRESETS),
                       help="apply a named preset before the config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a single config key (repeatable)")

    p_run = sub.add_parser("run", help="execute a seeded A/B experiment")
    add_config_args(p_run)
    p_run.add_argument("--out", help="run output directory")
    p_run.add_argument("--quiet", action="store_true", help="suppress progress lines")
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare", help="per-bucket treatment vs control table")
    p_cmp.add_argument("--run", required=True, help="run directory")
    p_cmp.add_argument("--method", choices=["bootstrap", "t"], default="bootstrap")
    p_cmp.add_argument("--resamples", type=int, default=10000)
    p_cmp.set_defaults(func=_cmd_compare)

    p_chart = sub.add_parser("chart", help="emit SVG charts for a run")
    p_chart.add_argument("--run", required=True, help="run directory")
    p_chart.add_argument("--out", help="chart output directory (default RUN/charts)")
    p_chart.add_argument("--method", choices=["bootstrap", "t"], default="bootstrap")
    p_chart.add_argument("--resamples", type=int, default=10000)
    p_chart.set_defaults(func=_cmd_chart)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--h", type=float, default=1e-5)
    p_grad.add_argument("--tol", type=float, default=1e-4)
    p_grad.set_defaults(func=_cmd_gradcheck)

    p_cal = sub.add_parser("calibrate", help="fit ground-truth bias terms")
    add_config_args(p_cal)
    p_cal.add_argument("--serves", type=int, default=100_000)
    p_cal.add_argument("--seed", type=int, default=7)
    p_cal.set_defaults(func=_cmd_calibrate)

    p_keys = sub.add_parser("help-config", help="list all config keys with defaults")
    p_keys.set_defaults(func=lambda a: print(ExperimentConfig.describe_keys()) or EXIT_OK)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (AnalysisError, CheckpointError) as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
