"""Command-line front end: run sweeps, validate configs, manage the cache.

Exit codes: 0 all experiments passed, 1 a verdict failed, 2 the config is
invalid, 3 a computation inside an experiment failed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import ConfigError
from .harness import SolveCache, load_config, run_file, validate_config

EXIT_PASS = 0
EXIT_VERDICT_FAIL = 1
EXIT_CONFIG_ERROR = 2
EXIT_COMPUTATION_ERROR = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bolab",
        description="Numerical laboratory for semiclassical band sweeps.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute every experiment in a config")
    run.add_argument("config", help="path to a JSON config file")
    run.add_argument("--out", default="results",
                     help="output directory for CSV/JSON/plot artifacts")
    run.add_argument("--jobs", type=int, default=None,
                     help="worker threads per experiment (default: CPU count)")
    run.add_argument("--no-cache", action="store_true",
                     help="solve everything fresh, ignore the cache")

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config", help="path to a JSON config file")

    cache = sub.add_parser("cache", help="inspect or empty the solve cache")
    cache.add_argument("action", choices=("stats", "clear"))
    cache.add_argument("--out", default="results",
                       help="run output directory holding the cache")
    return parser


def _fit_line(fit) -> str:
    if fit.kind == "slope":
        if fit.n_used:
            body = (f"slope {fit.slope:.3f} (claimed {fit.claimed:g}, "
                    f"floor {fit.threshold:g}, {fit.n_used} points)")
        else:
            body = "slope fit unavailable"
    elif fit.kind == "spread":
        body = (f"ratio spread {fit.spread:.3f} (limit {fit.threshold:g})"
                if fit.n_used else "spread undecidable")
    else:
        body = f"max |error| {fit.max_error:.3e} (tolerance {fit.threshold:g})"
    mark = "pass" if fit.passed else "FAIL"
    notes = f"  [{'; '.join(fit.notes)}]" if fit.notes else ""
    return f"    {fit.series}: {body} -> {mark}{notes}"


def _cmd_run(args) -> int:
    try:
        report, artifacts = run_file(
            args.config, out_dir=args.out, jobs=args.jobs,
            use_cache=not args.no_cache)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    for exp in report.experiments:
        status = "pass" if exp.passed else "FAIL"
        print(f"{exp.name} ({exp.kind}): {status}")
        if exp.error is not None:
            print(f"    aborted: {exp.error}")
        for fit in exp.fits:
            print(_fit_line(fit))
    print(f"report: {artifacts['report']}")
    print("verdict:", "PASS" if report.passed else "FAIL")
    if report.computation_errors:
        return EXIT_COMPUTATION_ERROR
    return EXIT_PASS if report.passed else EXIT_VERDICT_FAIL


def _cmd_validate(args) -> int:
    try:
        parsed, _ = load_config(args.config)
        validated = validate_config(parsed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    names = ", ".join(name for name, _ in validated.experiments)
    print(f"{args.config}: ok ({len(validated.experiments)} experiment(s): "
          f"{names})")
    return EXIT_PASS


def _cmd_cache(args) -> int:
    cache = SolveCache(Path(args.out) / "cache")
    if args.action == "stats":
        stats = cache.stats()
        print(f"{stats['directory']}: {stats['entries']} entries, "
              f"{stats['bytes']} bytes")
    else:
        removed = cache.clear()
        print(f"removed {removed} cache entries")
    return EXIT_PASS


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "validate": _cmd_validate,
               "cache": _cmd_cache}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
