"""Command-line interface.

Subcommands:

  simulate        emit one synthetic cohort replicate as subject/event CSVs
  perr            run both treatment-effect estimates on user CSV data
  drim            event-dependence diagnostic on user CSV data
  scenario        run a built-in scenario table and write the metrics TSV
  calibrate-beta0 recompute the baseline rates behind the built-in tables

Exit codes: 0 success, 1 usage error, 2 data error, 3 convergence-failure
threshold exceeded.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import harness
from .cohort import build_counting_rows, match_cohort, rate_table, split_periods
from .cox import FitOptions, estimate_perr_ag, estimate_perr_cf
from .drim import discretize, fit_drim
from .harness import DataError, ScenarioError
from .simulate import simulate_cohort
from .types import ConvergenceError, PerrKitError, ValidationError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CONVERGENCE = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="perrkit", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="emit a synthetic cohort as CSV")
    p_sim.add_argument("--config", required=True, help="scenario config file")
    p_sim.add_argument("--replicate", type=int, default=0)
    p_sim.add_argument("--subjects-out", required=True)
    p_sim.add_argument("--events-out", required=True)

    p_perr = sub.add_parser("perr", help="PERR estimates on user data")
    src = p_perr.add_argument_group("input (subject/event files or counting rows)")
    src.add_argument("--subjects", help="subject CSV: id,end_time,treatment_time,...")
    src.add_argument("--events", help="event CSV: id,time")
    src.add_argument("--counting", help="counting-process CSV: id,start,stop,status,...")
    p_perr.add_argument("--window", type=float, default=None,
                        help="restrict to this span before and after the index")
    p_perr.add_argument("--match-keys", default="",
                        help="comma-separated covariate names for exact matching")
    p_perr.add_argument("--stratify", action="store_true",
                        help="also fit the event-number-stratified frailty estimate")
    p_perr.add_argument("--pooling", type=float, default=0.95,
                        help="event-count percentile above which strata pool")
    p_perr.add_argument("--variance", choices=("robust", "model"), default="robust")
    p_perr.add_argument("--seed", type=int, default=0, help="matching tie-break seed")

    p_drim = sub.add_parser("drim", help="event-dependence diagnostic")
    p_drim.add_argument("--subjects", required=True)
    p_drim.add_argument("--events", required=True)
    p_drim.add_argument("--interval", type=float, required=True,
                        help="interval length, in the data's time unit")
    p_drim.add_argument("--nodes", type=int, default=15)

    p_scen = sub.add_parser("scenario", help="run a built-in scenario table")
    p_scen.add_argument("--table", choices=sorted(harness.TABLE_SHAPES), default="main")
    p_scen.add_argument("--replicates", type=int, default=500)
    p_scen.add_argument("--seed", type=int, default=0)
    p_scen.add_argument("--workers", type=int, default=1)
    p_scen.add_argument("--rows", default="",
                        help="comma-separated row labels (default: all ten)")
    p_scen.add_argument("--methods", default="ag,cf")
    p_scen.add_argument("--out", default="-", help="metrics TSV path (- = stdout)")
    p_scen.add_argument("--records-out", default=None,
                        help="per-replicate CSV path")

    p_cal = sub.add_parser("calibrate-beta0",
                           help="recompute baseline rates for a table")
    p_cal.add_argument("--table", choices=sorted(harness.TABLE_SHAPES), default="main")
    p_cal.add_argument("--seed", type=int, default=7_000_000)
    p_cal.add_argument("--replicates", type=int, default=24)
    return parser


def _cmd_simulate(args) -> int:
    with open(args.config) as fh:
        config = harness.parse_scenario_config(fh.read())
    subjects = simulate_cohort(config, args.replicate)
    harness.write_subjects_csv(subjects, args.subjects_out)
    harness.write_events_csv(subjects, args.events_out)
    print(f"wrote {len(subjects)} subjects"
          f" ({sum(len(s.event_times) for s in subjects)} events)")
    return EXIT_OK


def _perr_rows(args):
    if args.counting:
        if args.subjects or args.events:
            raise _UsageError("--counting excludes --subjects/--events")
        plain = harness.read_counting_csv(args.counting)
        return plain, None
    if not (args.subjects and args.events):
        raise _UsageError("need --subjects and --events (or --counting)")
    subjects = harness.ingest_subjects(args.subjects, args.events)
    keys = [k.strip() for k in args.match_keys.split(",") if k.strip()]
    pairs = match_cohort(subjects, keys, np.random.default_rng(args.seed))
    if not pairs:
        raise DataError("no matched pairs")
    analyzed = [s for p in pairs for s in split_periods(p, args.window)]
    plain = build_counting_rows(analyzed)
    strat = build_counting_rows(analyzed, stratify=True,
                                pooling_percentile=args.pooling)
    return plain, strat


def _cmd_perr(args) -> int:
    plain, strat = _perr_rows(args)
    table = rate_table(plain)
    print("events / person-time (rate) by group and period:")
    for group in ("treated", "control"):
        cells = []
        for period in ("prior", "post"):
            c = table.get((group, period))
            cells.append(f"{period}: {c.events}/{c.person_time:.4g}"
                         f" ({c.rate:.4g})" if c else f"{period}: -")
        print(f"  {group:8s} " + "  ".join(cells))
    ag = estimate_perr_ag(plain, variance=args.variance)
    print(f"recurrent-event estimate: HR {ag.perr_hr:.3f}"
          f" (95% CI {ag.ci_low:.3f} to {ag.ci_high:.3f}), p {ag.p_value:.3f}")
    if args.stratify:
        if strat is None:
            strat = _restratify_counting(plain, args.pooling)
        cf = estimate_perr_cf(strat)
        print(f"frailty-adjusted estimate:  HR {cf.perr_hr:.3f}"
              f" (95% CI {cf.ci_low:.3f} to {cf.ci_high:.3f}), p {cf.p_value:.3f}")
    return EXIT_OK


def _restratify_counting(rows, pooling):
    """Event-number strata for rows given directly in counting form."""
    from .types import CountingRow
    by_subject: dict[str, list] = {}
    for r in rows:
        by_subject.setdefault(r.subject_id, []).append(r)
    counts = [sum(r.status for r in rs) for rs in by_subject.values()]
    pool_at = max(1, int(np.quantile(np.asarray(counts), pooling, method="higher")))
    out = []
    for rs in by_subject.values():
        seen = 0
        for r in sorted(rs, key=lambda r: r.start):
            out.append(CountingRow(r.subject_id, r.cluster_id,
                                   min(seen + 1, pool_at), r.start, r.stop,
                                   r.status, r.covariates))
            seen += r.status
    return out


def _cmd_drim(args) -> int:
    subjects = harness.ingest_subjects(args.subjects, args.events)
    panel = discretize(subjects, args.interval)
    fit = fit_drim(panel, quadrature_nodes=args.nodes)
    print(f"lagged-response odds ratio {fit.odds_ratio:.3f}"
          f" (95% CI {fit.ci_low:.3f} to {fit.ci_high:.3f});"
          f" random-intercept SD {fit.sigma_b:.3f}")
    if not fit.converged:
        print("warning: fit did not converge", file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


def _cmd_scenario(args) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    rows = harness.table_rows(args.table)
    if args.rows:
        wanted = {r.strip() for r in args.rows.split(",") if r.strip()}
        unknown = wanted - {r.label for r in rows}
        if unknown:
            raise _UsageError(f"unknown row labels: {sorted(unknown)}")
        rows = [r for r in rows if r.label in wanted]
    results = []
    for row in rows:
        config = harness.row_config(args.table, row, args.replicates, args.seed)
        results.append((row, harness.run_scenario(config, methods=methods,
                                                  workers=args.workers)))
    report = harness.SuiteReport(table=args.table, rows=tuple(results))
    tsv = harness.suite_tsv(report)
    if args.out == "-":
        sys.stdout.write(tsv)
    else:
        with open(args.out, "w") as fh:
            fh.write(tsv)
    if args.records_out:
        with open(args.records_out, "w") as fh:
            for row, res in report.rows:
                fh.write(f"# {row.label}\n")
                fh.write(harness.records_csv(res.records))
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    k = harness.TABLE_SHAPES[args.table]
    rows = harness.table_rows(args.table)
    print("label\ttarget_events\tbeta0")
    for i, row in enumerate(rows):
        b0 = harness.calibrate_beta0(row.kind, row.value, row.hr, k,
                                     row.target_events, master_seed=args.seed + i,
                                     n_replicates=args.replicates)
        print(f"{row.label}\t{row.target_events:.0f}\t{b0:.4f}")
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "perr": _cmd_perr,
    "drim": _cmd_drim,
    "scenario": _cmd_scenario,
    "calibrate-beta0": _cmd_calibrate,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValidationError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (ScenarioError, ConvergenceError) as err:
        print(f"convergence failure: {err}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except PerrKitError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
