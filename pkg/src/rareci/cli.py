"""Command-line interface.

Subcommands::

    rareci estimate --weights FILE [--method eb,go,...] [--alpha 0.1] ...
    rareci simulate --config FILE --out FILE [--jobs N]
    rareci report --in results.csv --out-prefix PATH
    rareci check-monotonicity --weights FILE --subset-category NAME --methods LIST

Exit status is 0 on success, 2 for input errors, 3 for numerical failures
and 1 for anything unexpected.
Errors are printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace

from .ci import check_monotonicity, compute_ci
from .core import (
    Backend,
    CiConfig,
    CiResult,
    InputError,
    Method,
    NextWeightMode,
    NextWeightSpec,
    NumericalError,
    WeightSample,
)
from .io import load_scenario_config, read_report_csv, read_segments_csv, read_weights_csv, write_report_csv
from .report import write_report
from .simulator import run_study

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_OTHER = 0, 2, 3, 1
AUTO_FALLBACK_MSG = "--next-weight auto without --segments or --w2: using the maximum observed weight"

log = logging.getLogger("rareci")


def _methods(text: str) -> list[Method]:
    return [Method.parse(t.strip()) for t in text.split(",") if t.strip()]


def _next_weight_spec(args, sample: WeightSample, methods: list[Method]) -> NextWeightSpec:
    choice = str(args.next_weight).strip().lower()
    needs = any(m not in (Method.PB, Method.GM) for m in methods)
    if choice == "auto":
        if args.segments or args.w2 is not None:
            return NextWeightSpec(NextWeightMode.WM, gamma_hat=args.gamma_hat, w2_value=args.w2)
        if needs:
            print(f"warning: {AUTO_FALLBACK_MSG}", file=sys.stderr)
        return NextWeightSpec(NextWeightMode.MAX_OBSERVED)
    if choice in ("max-observed", "max_observed"):
        return NextWeightSpec(NextWeightMode.MAX_OBSERVED)
    if choice in ("w2", "wm"):
        return NextWeightSpec(NextWeightMode(choice), gamma_hat=args.gamma_hat, w2_value=args.w2)
    try:
        return NextWeightSpec.fixed(float(choice))
    except ValueError:
        raise InputError(f"--next-weight must be auto, max-observed, w2, wm or a number, got {args.next_weight!r}")


def _fmt(x: float, rounded: bool) -> str:
    return str(int(round(x))) if rounded else f"{x:.6g}"


def format_result(res: CiResult, rounded: bool = False) -> str:
    return f"{_fmt(res.point_estimate, rounded)},[{_fmt(res.lower, rounded)},{_fmt(res.upper, rounded)}]"


def _load_sample(args) -> WeightSample:
    sample = read_weights_csv(args.weights, miles_normalizer=args.miles)
    if getattr(args, "category", None):
        sample = sample.subset(args.category)
    return sample


def cmd_estimate(args) -> int:
    sample = _load_sample(args)
    methods = _methods(args.method)
    if not methods:
        raise InputError("--method is empty")
    records = read_segments_csv(args.segments) if args.segments else None
    nw = _next_weight_spec(args, sample, methods)
    results = []
    for m in methods:
        cfg = CiConfig(
            alpha=args.alpha, method=m, backend=args.backend, bootstrap_draws=args.bootstrap,
            seed=args.seed, next_weight=nw,
        )
        results.append(compute_ci(sample, cfg, records))
    for res in results:
        line = format_result(res, args.round)
        print(line if len(results) == 1 else f"{res.method.value}: {line}")
        for w in res.warnings:
            print(f"warning: {w}", file=sys.stderr)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            out.writerow(["method", "alpha", "backend", "next_weight", "point_estimate", "lower", "upper", "warnings"])
            for r in results:
                out.writerow([
                    r.method.value, r.alpha, r.backend.value if r.backend else "", r.next_weight_used,
                    r.point_estimate, r.lower, r.upper, "; ".join(r.warnings),
                ])
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = load_scenario_config(args.config)
    scenarios = config.scenarios()
    if args.replicates:
        scenarios = [replace(s, replicates=args.replicates) for s in scenarios]
    report = run_study(scenarios, jobs=args.jobs)
    write_report_csv(args.out, report)
    print(f"wrote {len(report.rows)} rows to {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    paths = write_report(read_report_csv(args.input), args.out_prefix)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_check_monotonicity(args) -> int:
    sample = read_weights_csv(args.weights, miles_normalizer=args.miles)
    methods = _methods(args.methods)
    records = read_segments_csv(args.segments) if args.segments else None
    nw = _next_weight_spec(args, sample, methods)
    cfg = CiConfig(
        alpha=args.alpha, method=methods[0], backend=args.backend, bootstrap_draws=args.bootstrap,
        seed=args.seed, next_weight=nw,
    )
    rows = check_monotonicity(sample, args.subset_category, methods, cfg, records)
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["method", "subset_lower", "subset_upper", "union_lower", "union_upper",
                  "lower_violation", "upper_violation"])
    for r in rows:
        f = lambda x: _fmt(x, args.round)  # noqa: E731
        out.writerow([
            r.method.value, f(r.subset.lower), f(r.subset.upper), f(r.union.lower), f(r.union.upper),
            int(r.lower_violation), int(r.upper_violation),
        ])
    return EXIT_OK


def _add_ci_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--weights", required=True, help="CSV with header weight,category")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--backend", default="saddlepoint", type=Backend.parse,
                   help="mc or saddlepoint (EB/WG only; PB is always Monte Carlo)")
    p.add_argument("--next-weight", default="auto", help="auto, max-observed, w2, wm, or a number")
    p.add_argument("--gamma-hat", type=float, default=0.5, help="sampling index for estimating ||w||_2")
    p.add_argument("--w2", type=float, default=None, help="known ||w||_2 for the w2/wm rules")
    p.add_argument("--segments", default=None, help="segments CSV for estimating ||w||_2")
    p.add_argument("--bootstrap", type=int, default=10_000, help="Monte Carlo draws B")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--miles", type=float, default=1.0, help="million miles to normalize the rate by")
    p.add_argument("--round", action="store_true", help="round bounds to integers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rareci", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="point estimate and confidence interval")
    _add_ci_flags(p)
    p.add_argument("--method", default="eb", help="comma list of pb,eb,wg,go,gp,gm")
    p.add_argument("--category", default=None, help="restrict to one category")
    p.add_argument("--out", default=None, help="also write results to this CSV")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="run a coverage study")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--replicates", type=int, default=None, help="override replicates per cell")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="pivot tables and SVG charts from simulate output")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("check-monotonicity", help="compare a category's CI with the pooled CI")
    _add_ci_flags(p)
    p.add_argument("--subset-category", required=True)
    p.add_argument("--methods", default="go,gp,gm,wg,eb,pb")
    p.set_defaults(func=cmd_check_monotonicity)
    return parser


def _error(exc: Exception, kind: str, code: int) -> int:
    print(json.dumps({"error": type(exc).__name__, "kind": kind, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        return _error(exc, "input", EXIT_INPUT)
    except NumericalError as exc:
        return _error(exc, "numerical", EXIT_NUMERICAL)
    except (OSError, ValueError) as exc:
        return _error(exc, "input", EXIT_INPUT)
    except Exception as exc:  # noqa: BLE001
        log.debug("unexpected error", exc_info=True)
        return _error(exc, "internal", EXIT_OTHER)


if __name__ == "__main__":
    sys.exit(main())
