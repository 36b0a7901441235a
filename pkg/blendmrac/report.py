"""Run artifacts: the series CSV, JSON summary and comparison records, and SVG plots."""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import matplotlib
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from .exceptions import MissingColumns
from .models import ComparisonReport, Metrics, Scenario
from .simulator import TimeSeries

matplotlib.use("Agg")

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
FLOAT_FORMAT = "%.17g"

plt.rcParams["svg.hashsalt"] = "blendmrac"


def series_columns(n: int, m: int, N: int) -> List[str]:
    """Column order of the series CSV."""
    return (
        ["t"]
        + [f"x_p{i + 1}" for i in range(n)]
        + [f"x_r{i + 1}" for i in range(n)]
        + [f"u{i + 1}" for i in range(m)]
        + [f"what{i + 1}" for i in range(N)]
        + ["err_norm", "theta_err_fro", "sigma_min_bhat", "V_e", "V_1"]
    )


class RunSummary(BaseModel):
    """Sidecar record written next to every series CSV."""

    model_config = ConfigDict(frozen=True)

    schema_version: str = SCHEMA_VERSION
    scenario_name: str
    scenario_hash: str
    controller_mode: str
    filter_lambda: float
    n: int
    m: int
    N: int
    metrics: Metrics
    invariants: Dict[str, bool]
    wall_clock_s: float


class ComparisonRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    schema_version: str = SCHEMA_VERSION
    scenario_hash: str
    comparison: ComparisonReport


def write_series_csv(series: TimeSeries, path: Union[str, Path]) -> Path:
    path = Path(path)
    frame = series.to_frame()
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="nan", lineterminator="\n")
    logger.debug("wrote %d rows to %s", len(frame), path)
    return path


def read_series_csv(path: Union[str, Path], required: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """
    Load a series CSV.

    Raises:
        MissingColumns: If `t` or any of `required` is absent.
    """
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [column for column in ["t", *(required or [])] if column not in frame.columns]
    if missing:
        raise MissingColumns(missing)
    return frame


def block_columns(frame: pd.DataFrame, prefix: str) -> List[str]:
    """`prefix1`, `prefix2`, ... in index order."""
    columns = []
    while f"{prefix}{len(columns) + 1}" in frame.columns:
        columns.append(f"{prefix}{len(columns) + 1}")
    return columns


def write_summary(summary: RunSummary, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(summary.model_dump_json(indent=2) + "\n")
    return path


def read_summary(path: Union[str, Path]) -> RunSummary:
    return RunSummary.model_validate_json(Path(path).read_text())


def write_comparison(record: ComparisonRecord, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(record.model_dump_json(indent=2) + "\n")
    return path


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def write_plots(series: TimeSeries, sc: Scenario, out_dir: Union[str, Path]) -> List[Path]:
    """Tracking, control effort, error norm, weights and estimated matrix entries, one SVG each."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t = series.t
    written = []

    fig, axes = plt.subplots(series.n, 1, sharex=True, figsize=(7, 2.2 * series.n), squeeze=False)
    for i, ax in enumerate(axes[:, 0]):
        ax.plot(t, series.x_r[:, i], "k--", label="reference")
        ax.plot(t, series.x_p[:, i], label=sc.controller_mode)
        ax.set_ylabel(f"x{i + 1}")
    axes[0, 0].legend(loc="upper right")
    axes[-1, 0].set_xlabel("t [s]")
    written.append(_save(fig, out_dir / "states.svg"))

    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(t, series.u)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("u")
    written.append(_save(fig, out_dir / "control.svg"))

    fig, ax = plt.subplots(figsize=(7, 3))
    ax.semilogy(t, np.maximum(series.err_norm, 1e-300))
    ax.set_xlabel("t [s]")
    ax.set_ylabel("|e|")
    written.append(_save(fig, out_dir / "error_norm.svg"))

    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(t, series.w)
    ax.legend([f"w{i + 1}" for i in range(series.N)], loc="upper right")
    ax.set_xlabel("t [s]")
    written.append(_save(fig, out_dir / "weights.svg"))

    n = series.n
    for name, block, truth in (
        ("A_hat", series.theta_hat[:, :, :n], sc.plant.A),
        ("B_hat", series.theta_hat[:, :, n:], sc.plant.B),
    ):
        rows, cols = truth.shape
        fig, axes = plt.subplots(rows, cols, sharex=True, figsize=(2.6 * cols, 1.8 * rows), squeeze=False)
        for i in range(rows):
            for j in range(cols):
                ax = axes[i, j]
                ax.plot(t, block[:, i, j])
                ax.axhline(truth[i, j], color="k", linestyle="--", linewidth=0.8)
                ax.set_title(f"({i + 1},{j + 1})", fontsize=8)
        written.append(_save(fig, out_dir / f"{name}.svg"))

    logger.info("wrote %d plots to %s", len(written), out_dir)
    return written


def write_comparison_plot(
    series_mmrac: TimeSeries, series_single: TimeSeries, report: ComparisonReport, path: Union[str, Path]
) -> Path:
    """Semilog error norms of both runs with their regression slopes in the legend."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.semilogy(series_mmrac.t, np.maximum(series_mmrac.err_norm, 1e-300), label=f"MMRAC, slope {report.slope_mmrac}")
    ax.semilogy(
        series_single.t, np.maximum(series_single.err_norm, 1e-300), label=f"single model, slope {report.slope_single}"
    )
    ax.set_xlabel("t [s]")
    ax.set_ylabel("|e|")
    ax.legend(loc="upper right")
    return _save(fig, Path(path))
