import argparse
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy import signal

from .exceptions import BlendMRACException, MissingColumns
from .identifier import pe_profile
from .matpoly import compute_gains, refine_matching_polytope
from .models import Metrics, Scenario
from .report import (
    ComparisonRecord,
    RunSummary,
    block_columns,
    read_series_csv,
    read_summary,
    write_comparison,
    write_comparison_plot,
    write_plots,
    write_series_csv,
    write_summary,
)
from .scenario_file import (
    apply_overrides,
    build_corner_set,
    build_scenario,
    build_target,
    load_document,
    scenario_hash,
    with_corners,
    write_document,
)
from .simulator import TimeSeries, check_invariants, compare_runs, run
from .version import VERSION

logger = logging.getLogger(__name__)

MODES = ("mmrac", "single_model", "identification_only")


def _summary(sc: Scenario, series: TimeSeries, metrics: Metrics, started: float) -> RunSummary:
    return RunSummary(
        scenario_name=sc.name,
        scenario_hash=scenario_hash(sc),
        controller_mode=sc.controller_mode,
        filter_lambda=sc.id_cfg.lambda_,
        n=series.n,
        m=series.m,
        N=series.N,
        metrics=metrics,
        invariants=check_invariants(series, sc),
        wall_clock_s=time.perf_counter() - started,
    )


def _write_run(sc: Scenario, series: TimeSeries, metrics: Metrics, out_dir: Path, started: float, svg: bool) -> RunSummary:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_series_csv(series, out_dir / "series.csv")
    summary = _summary(sc, series, metrics, started)
    write_summary(summary, out_dir / "summary.json")
    if svg:
        write_plots(series, sc, out_dir)
    return summary


def cmd_refine(args) -> int:
    doc = load_document(args.scenario)
    target = build_target(doc)
    refined, witnesses = refine_matching_polytope(build_corner_set(doc), target)
    for index, (corner, witness) in enumerate(zip(refined.corners, witnesses)):
        print(f"corner {index + 1}:")
        print(f"  A = {corner.A.tolist()}")
        print(f"  B = {corner.B.tolist()}")
        print(f"  weights = {witness.w.tolist()}")
        gains = compute_gains(corner, target, index=index)
        print(f"  K = {gains.K.tolist()}")
        print(f"  L = {gains.L.tolist()}")

    out = Path(args.output) if args.output else Path(args.scenario).with_suffix(".refined.yaml")
    write_document(with_corners(doc, refined), out)
    print(f"wrote {out}")
    return 0


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    doc = apply_overrides(load_document(args.scenario), mode=args.mode, dt=args.dt, t_end=args.t_end)
    sc = build_scenario(doc)
    series, metrics = run(sc)
    summary = _write_run(sc, series, metrics, Path(args.out_dir), started, args.svg)
    print(summary.metrics.model_dump_json(indent=2))
    failed = [name for name, ok in summary.invariants.items() if not ok]
    if failed:
        print("failed invariant checks: " + ", ".join(failed), file=sys.stderr)
    return 0


def cmd_compare(args) -> int:
    started = time.perf_counter()
    doc = apply_overrides(load_document(args.scenario), dt=args.dt, t_end=args.t_end)
    sc_mmrac = build_scenario(apply_overrides(doc, mode="mmrac"))
    sc_single = build_scenario(apply_overrides(doc, mode="single_model", dt=args.single_dt, t_end=args.single_t_end))

    report, (series_a, metrics_a), (series_b, metrics_b) = compare_runs(sc_mmrac, sc_single)
    out_dir = Path(args.out_dir)
    _write_run(sc_mmrac, series_a, metrics_a, out_dir / "mmrac", started, args.svg)
    _write_run(sc_single, series_b, metrics_b, out_dir / "single_model", started, args.svg)
    write_comparison(ComparisonRecord(scenario_hash=scenario_hash(sc_mmrac), comparison=report), out_dir / "comparison.json")
    if args.svg:
        write_comparison_plot(series_a, series_b, report, out_dir / "error_comparison.svg")
    print(report.model_dump_json(indent=2))
    return 0


def reconstruct_regressor(t: np.ndarray, signals: np.ndarray, lambda_: float) -> np.ndarray:
    """Filter [x_p, u] through 1/(s + lambda) from zero initial state."""
    system = signal.lti([1.0], [1.0, lambda_])
    return np.column_stack([signal.lsim(system, signals[:, j], t)[1] for j in range(signals.shape[1])])


def cmd_pe_check(args) -> int:
    frame = read_series_csv(args.series)
    x_cols, u_cols = block_columns(frame, "x_p"), block_columns(frame, "u")
    missing = [name for name, cols in (("x_p1", x_cols), ("u1", u_cols)) if not cols]
    if missing:
        raise MissingColumns(missing)

    lambda_ = args.filter_lambda
    if lambda_ is None:
        sidecar = Path(args.summary) if args.summary else Path(args.series).with_name("summary.json")
        if not sidecar.exists():
            raise MissingColumns([f"filter lambda ({sidecar} not found, pass --lambda)"])
        lambda_ = read_summary(sidecar).filter_lambda

    t = frame["t"].to_numpy()
    Phi = reconstruct_regressor(t, frame[x_cols + u_cols].to_numpy(), lambda_)
    reports = pe_profile(t, Phi, args.window, args.stride)
    for report in reports:
        print(f"t0={report.t0:.6g} alpha1={report.alpha1:.6e} alpha2={report.alpha2:.6e}")
    if reports:
        print(f"min alpha1 = {min(report.alpha1 for report in reports):.6e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blendmrac", description="Multiple-model reference adaptive control with blending.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("-v", "--verbose", action="store_true", help="shorthand for --log-level INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    refine = sub.add_parser("refine", help="refine a corner set to the matching polytope")
    refine.add_argument("scenario")
    refine.add_argument("-o", "--output", help="refined scenario path (default: <scenario>.refined.yaml)")
    refine.set_defaults(func=cmd_refine)

    simulate = sub.add_parser("simulate", help="run one scenario")
    simulate.add_argument("scenario")
    simulate.add_argument("-o", "--out-dir", required=True)
    simulate.add_argument("--mode", choices=MODES)
    simulate.add_argument("--dt", type=float)
    simulate.add_argument("--t-end", type=float)
    simulate.add_argument("--svg", action="store_true")
    simulate.set_defaults(func=cmd_simulate)

    compare = sub.add_parser("compare", help="run MMRAC and the single-model baseline on one scenario")
    compare.add_argument("scenario")
    compare.add_argument("-o", "--out-dir", required=True)
    compare.add_argument("--dt", type=float)
    compare.add_argument("--t-end", type=float)
    compare.add_argument("--single-dt", type=float, help="override dt of the baseline run only")
    compare.add_argument("--single-t-end", type=float, help="override t_end of the baseline run only")
    compare.add_argument("--svg", action="store_true")
    compare.set_defaults(func=cmd_compare)

    pe = sub.add_parser("pe-check", help="windowed persistence-of-excitation report of a series CSV")
    pe.add_argument("series")
    pe.add_argument("--window", type=float, required=True)
    pe.add_argument("--stride", type=float)
    pe.add_argument("--lambda", dest="filter_lambda", type=float)
    pe.add_argument("--summary", help="summary.json holding the filter lambda (default: next to the CSV)")
    pe.set_defaults(func=cmd_pe_check)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level="INFO" if args.verbose else args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except BlendMRACException as error:
        print(str(error), file=sys.stderr)
        return error.code
