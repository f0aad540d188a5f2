"""Command-line entry point: ``succession {predict,compare,regret,shift}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .bayes import DEFAULT_NODES
from .family import parse_family
from .fit import ml_fit, summarize
from .harness import (
    _jsonable,
    emit_report,
    generate,
    parse_sequence_spec,
    parse_t_grid,
    regret,
    resolve_predictor,
    run_comparison,
    shift_series,
    split_predictor_list,
)

DEFAULT_GRID = "dyadic:4..12"


def _common(p):
    p.add_argument("--family", required=True, help="bernoulli | categorical:K | custom:<path.json>")
    p.add_argument("--seq", required=True, help="iid:theta=<v,...>:seed=<n> | periodic:<symbols> | file:<path>")
    p.add_argument("--prior", default=None, help="default prior: jeffreys | uniform | beta:a,b | dirichlet:a1,...")


def _out(p, default_format="json"):
    p.add_argument("--out", default=None, help="output path (stdout when omitted)")
    p.add_argument("--format", default=default_format, choices=["csv", "json"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="succession", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("predict", help="one predictive distribution as JSON")
    _common(p)
    p.add_argument("--predictor", required=True)
    p.add_argument("--t", type=int, required=True, help="condition on the first t symbols")
    p.add_argument("--nodes", type=int, default=DEFAULT_NODES)

    p = sub.add_parser("compare", help="pairwise discrepancy series with log-log slope fits")
    _common(p)
    p.add_argument("--predictors", required=True, help="comma-separated predictor specs")
    p.add_argument("--t-grid", default=DEFAULT_GRID)
    p.add_argument("--nodes", type=int, default=DEFAULT_NODES)
    _out(p)

    p = sub.add_parser("regret", help="cumulative log-loss regret against the hindsight ML")
    _common(p)
    p.add_argument("--predictor", required=True)
    p.add_argument("--T", type=int, required=True)
    _out(p)

    p = sub.add_parser("shift", help="posterior-center shift vs V/t along a t grid")
    _common(p)
    p.add_argument("--t-grid", default="dyadic:5..11")
    # residuals reach 1e-8 at t = 2048; 200 nodes per axis are not enough there
    p.add_argument("--nodes", type=int, default=2 * DEFAULT_NODES)
    _out(p)
    return parser


def _write(text: str, out):
    if out is None:
        sys.stdout.write(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        family = parse_family(args.family)
        spec = parse_sequence_spec(args.seq)
        if args.command == "predict":
            seq = generate(spec, family, args.t)
            pred = resolve_predictor(args.predictor, family, args.prior, args.nodes)
            summary = summarize(family, seq)
            fit = ml_fit(family, summary) if summary.t >= 1 else None
            dist = pred(summary, fit)
            meta = {k: v for k, v in dist.meta.items() if k != "refit_theta"}
            doc = {"predictor": pred.spec, "t": summary.t, "counts": summary.counts, "probs": dist.probs, "meta": meta}
            sys.stdout.write(json.dumps(_jsonable(doc), indent=2) + "\n")
        elif args.command == "compare":
            grid = parse_t_grid(args.t_grid)
            seq = generate(spec, family, grid[-1])
            results = run_comparison(family, seq, split_predictor_list(args.predictors), args.prior, grid, args.nodes)
            _write(emit_report(results, args.format, args.out), args.out)
        elif args.command == "regret":
            seq = generate(spec, family, args.T)
            rec = regret(family, seq, args.predictor, args.prior)
            _write(emit_report(rec, args.format, args.out), args.out)
        elif args.command == "shift":
            grid = parse_t_grid(args.t_grid)
            seq = generate(spec, family, grid[-1])
            res = shift_series(family, seq, grid, args.prior or "jeffreys", args.nodes)
            _write(emit_report(res, args.format, args.out), args.out)
    except (ValueError, OSError, NotImplementedError) as exc:
        print(f"succession: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
