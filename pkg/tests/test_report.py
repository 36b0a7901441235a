import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.testing import assert_allclose

from blendmrac.exceptions import MissingColumns
from blendmrac.models import ComparisonReport
from blendmrac.report import (
    SCHEMA_VERSION,
    ComparisonRecord,
    RunSummary,
    block_columns,
    read_series_csv,
    read_summary,
    series_columns,
    write_comparison,
    write_comparison_plot,
    write_plots,
    write_series_csv,
    write_summary,
)
from blendmrac.scenario_file import scenario_hash
from blendmrac.simulator import check_invariants, input_gain_scenario, run


class TestSeriesCsv(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.sc = input_gain_scenario(T_end=1.0)
        cls.series, cls.metrics = run(cls.sc)

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_columns(self):
        self.assertEqual(
            series_columns(2, 1, 2),
            ["t", "x_p1", "x_p2", "x_r1", "x_r2", "u1", "what1", "what2",
             "err_norm", "theta_err_fro", "sigma_min_bhat", "V_e", "V_1"],
        )
        frame = read_series_csv(write_series_csv(self.series, self.dir / "series.csv"))
        self.assertEqual(list(frame.columns), series_columns(2, 1, 2))
        self.assertEqual(len(frame), self.sc.n_samples)

    def test_full_precision(self):
        frame = read_series_csv(write_series_csv(self.series, self.dir / "series.csv"))
        self.assertTrue(np.array_equal(frame["x_p1"].to_numpy(), self.series.x_p[:, 0]))
        self.assertTrue(np.array_equal(frame["t"].to_numpy(), self.series.t))

    def test_byte_identical(self):
        a = write_series_csv(self.series, self.dir / "a.csv").read_bytes()
        b = write_series_csv(self.series, self.dir / "b.csv").read_bytes()
        self.assertEqual(a, b)

    def test_missing_columns(self):
        pd.DataFrame({"t": [0.0, 1.0], "x_p1": [1.0, 2.0]}).to_csv(self.dir / "partial.csv", index=False)
        with self.assertRaises(MissingColumns) as ctx:
            read_series_csv(self.dir / "partial.csv", required=["u1"])
        self.assertEqual(ctx.exception.columns, ["u1"])

    def test_block_columns(self):
        frame = read_series_csv(write_series_csv(self.series, self.dir / "series.csv"))
        self.assertEqual(block_columns(frame, "x_p"), ["x_p1", "x_p2"])
        self.assertEqual(block_columns(frame, "what"), ["what1", "what2"])
        self.assertEqual(block_columns(frame, "y"), [])

    def test_summary_round_trip(self):
        summary = RunSummary(
            scenario_name=self.sc.name,
            scenario_hash=scenario_hash(self.sc),
            controller_mode=self.sc.controller_mode,
            filter_lambda=self.sc.id_cfg.lambda_,
            n=2,
            m=1,
            N=2,
            metrics=self.metrics,
            invariants=check_invariants(self.series, self.sc),
            wall_clock_s=0.5,
        )
        loaded = read_summary(write_summary(summary, self.dir / "summary.json"))
        self.assertEqual(loaded, summary)
        self.assertEqual(loaded.schema_version, SCHEMA_VERSION)

    def test_comparison_record(self):
        report = ComparisonReport(
            slope_mmrac=-0.03,
            slope_single=-0.01,
            slope_ratio=3.0,
            final_error_mmrac=1e-3,
            final_error_single=1e-2,
            peak_control_mmrac=2.0,
            peak_control_single=3.0,
            initial_gains_identical=True,
        )
        path = write_comparison(ComparisonRecord(scenario_hash="abc", comparison=report), self.dir / "comparison.json")
        loaded = ComparisonRecord.model_validate_json(path.read_text())
        self.assertEqual(loaded.comparison, report)
        self.assertEqual(list(loaded.comparison.published_slopes), [-0.0333, -0.0103])


class TestPlots(unittest.TestCase):
    def test_writes_svgs(self):
        sc = input_gain_scenario(T_end=0.5)
        series, _ = run(sc)
        with tempfile.TemporaryDirectory() as tmp:
            written = write_plots(series, sc, tmp)
            names = sorted(path.name for path in written)
            self.assertEqual(names, ["A_hat.svg", "B_hat.svg", "control.svg", "error_norm.svg", "states.svg", "weights.svg"])
            first = (Path(tmp) / "states.svg").read_bytes()
            write_plots(series, sc, tmp)
            self.assertEqual((Path(tmp) / "states.svg").read_bytes(), first)

    def test_comparison_plot(self):
        sc = input_gain_scenario(T_end=0.5)
        series, _ = run(sc)
        report = ComparisonReport(
            slope_mmrac=None,
            slope_single=None,
            slope_ratio=None,
            final_error_mmrac=float(series.err_norm[-1]),
            final_error_single=float(series.err_norm[-1]),
            peak_control_mmrac=1.0,
            peak_control_single=1.0,
            initial_gains_identical=True,
        )
        with tempfile.TemporaryDirectory() as tmp:
            path = write_comparison_plot(series, series, report, Path(tmp) / "cmp.svg")
            self.assertTrue(path.read_text().lstrip().startswith("<?xml"))


if __name__ == "__main__":
    unittest.main()
