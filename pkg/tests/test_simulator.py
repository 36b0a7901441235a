import unittest

import numpy as np
from numpy.testing import assert_allclose
from scipy.linalg import expm

from blendmrac.exceptions import NumericalDivergence, RangeError, ScenarioMismatch, WindowTooSmall
from blendmrac.identifier import corner_outputs, epsilons, error_identity_residual
from blendmrac.models import (
    CornerSet,
    IdentifierConfig,
    InputChannel,
    MatchingTarget,
    ReferenceInputSpec,
    Scenario,
    SystemMatrices,
    WeightVector,
)
from blendmrac.simulator import (
    TimeSeries,
    check_invariants,
    compare,
    compare_runs,
    input_gain_scenario,
    log_slope,
    random_scenario,
    rk4_step,
    run,
    run_batch,
    scenario_differences,
    three_state_scenario,
    slope_regression,
)

W_STAR = np.array([0.5, 0.3, 0.2])


def three_corners() -> CornerSet:
    return CornerSet.from_arrays(
        [[[-1.0, 0.0], [0.0, -2.0]], [[-2.0, 1.0], [0.0, -1.0]], [[-1.5, 0.0], [1.0, -1.5]]],
        [[[1.0], [0.0]], [[0.0], [1.0]], [[1.0], [1.0]]],
    )


def identification_scenario(cs: CornerSet, w_star, w0, T_end: float = 100.0, **fields) -> Scenario:
    """Plant at `w_star` inside `cs`, open loop driven by a three-tone multisine."""
    plant = SystemMatrices.from_theta(np.tensordot(w_star, cs.thetas, axes=1), cs.n)
    values = dict(
        name="identification",
        plant=plant,
        target=MatchingTarget(A_r=-2.0 * np.eye(2), B_r=[[1.0], [0.0]]),
        corners=cs,
        id_cfg=IdentifierConfig.scalar(lambda_=1.0, alpha=0.01, gamma=5.0, size=cs.N - 1),
        controller_mode="identification_only",
        input=ReferenceInputSpec.multisine(1, [0.5, 1.3, 2.9]),
        x_p0=[0.5, -0.5],
        x_r0=[0.0, 0.0],
        w0=WeightVector(w=w0),
        dt=0.01,
        T_end=T_end,
    )
    values.update(fields)
    return Scenario(**values)


def plant_is_reference_scenario() -> Scenario:
    A_r = [[-1.0, 0.0], [0.0, -2.0]]
    B_r = [[1.0], [1.0]]
    return Scenario(
        name="plant_is_reference",
        plant=SystemMatrices(A=A_r, B=B_r),
        target=MatchingTarget(A_r=A_r, B_r=B_r),
        corners=CornerSet.from_arrays([A_r, A_r], [[[0.5], [0.5]], [[1.5], [1.5]]]),
        id_cfg=IdentifierConfig.scalar(lambda_=1.0, alpha=0.01, gamma=2.0, size=1),
        input=ReferenceInputSpec.multisine(1, [1.0, 2.0]),
        x_p0=[0.0, 0.0],
        x_r0=[0.0, 0.0],
        w0=WeightVector(w=[0.5, 0.5]),
        dt=0.01,
        T_end=5.0,
    )


class TestRK4(unittest.TestCase):
    def test_scalar_decay(self):
        y = rk4_step(lambda t, y: -y, np.array([1.0]), 0.0, 0.1)
        self.assertAlmostEqual(y[0], 0.90483750, places=8)

    def test_zero_dynamics(self):
        y0 = np.array([1.0, -2.0, 3.0])
        assert_allclose(rk4_step(lambda t, y: np.zeros_like(y), y0, 0.0, 0.5), y0)

    def test_linear_system_matches_expm(self):
        A_r = np.array([[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [1.0, 1.0, -1.0]])
        x0 = np.array([1.0, -1.0, 0.5])
        x = rk4_step(lambda t, y: A_r @ y, x0, 0.0, 1e-3)
        assert_allclose(x, expm(A_r * 1e-3) @ x0, atol=1e-12)

    def test_divergence(self):
        with self.assertRaises(NumericalDivergence) as ctx:
            rk4_step(lambda t, y: np.array([np.inf]), np.array([1.0]), 2.5, 0.1)
        self.assertEqual(ctx.exception.time, 2.5)


class TestSlopes(unittest.TestCase):
    def setUp(self):
        self.t = np.linspace(0.0, 100.0, 1001)

    def test_decades_per_second(self):
        self.assertAlmostEqual(log_slope(self.t, 10.0 ** (-0.0333 * self.t), 10.0, 100.0), -0.0333, places=10)
        self.assertAlmostEqual(log_slope(self.t, np.exp(-0.1 * self.t), 0.0, 100.0), -0.1 * np.log10(np.e), places=10)

    def test_constant(self):
        self.assertAlmostEqual(log_slope(self.t, np.full(self.t.size, 3.0), 0.0, 100.0), 0.0, places=12)

    def test_floor(self):
        values = np.where(self.t < 0.5, 1.0, 0.0)
        with self.assertRaises(WindowTooSmall):
            log_slope(self.t, values, 0.0, 100.0)

    def test_window_outside_series(self):
        series = run(plant_is_reference_scenario())[0]
        with self.assertRaises(RangeError):
            slope_regression(series, 1.0, 10.0)
        with self.assertRaises(RangeError):
            slope_regression(series, 3.0, 2.0)


class TestRun(unittest.TestCase):
    def test_grid(self):
        sc = identification_scenario(three_corners(), W_STAR, [1 / 3, 1 / 3, 1 / 3], T_end=0.001, dt=0.001)
        series, _ = run(sc)
        assert_allclose(series.t, [0.0, 0.001])
        self.assertEqual(series.to_frame().shape[0], 2)

    def test_series_columns(self):
        series, _ = run(plant_is_reference_scenario())
        self.assertIsInstance(series, TimeSeries)
        self.assertEqual(list(series.to_frame().columns)[:5], ["t", "x_p1", "x_p2", "x_r1", "x_r2"])
        self.assertEqual(list(series.to_frame().columns)[-5:], ["err_norm", "theta_err_fro", "sigma_min_bhat", "V_e", "V_1"])

    def test_plant_equal_to_reference_keeps_zero_error(self):
        series, metrics = run(plant_is_reference_scenario())
        self.assertLessEqual(np.max(series.err_norm), 1e-9)
        assert_allclose(series.w, 0.5, atol=1e-9)
        self.assertLessEqual(metrics.final_L_error, 1e-9)

    def test_deterministic(self):
        sc = input_gain_scenario(T_end=2.0)
        first, _ = run(sc)
        second, _ = run(sc)
        for name in ("x_p", "u", "w", "err_norm", "V_1"):
            self.assertTrue(np.array_equal(getattr(first, name), getattr(second, name), equal_nan=True))

    def test_identification_only_uses_reference_input(self):
        sc = input_gain_scenario(mode="identification_only", T_end=2.0)
        series, metrics = run(sc)
        r = np.array([sc.input.evaluate(t) for t in series.t])
        assert_allclose(series.u, r, atol=1e-12)
        self.assertIsNotNone(metrics.final_K_error)

    def test_single_model_freezes_weights(self):
        sc = input_gain_scenario(mode="single_model", T_end=2.0)
        series, _ = run(sc)
        assert_allclose(series.w, np.tile(sc.w0.w, (series.t.size, 1)), atol=0.0)

    def test_midpoint_identification(self):
        cs = CornerSet(corners=three_corners().corners[:2])
        sc = identification_scenario(cs, [0.5, 0.5], [0.9, 0.1], gamma_K=2.0)
        sc = Scenario.model_validate({**dict(sc), "id_cfg": IdentifierConfig.scalar(1.0, 0.01, 10.0, 1)})
        series, _ = run(sc)
        assert_allclose(series.w[-1], [0.5, 0.5], atol=1e-3)

    def test_exact_data_identification(self):
        sc = identification_scenario(three_corners(), W_STAR, [1 / 3, 1 / 3, 1 / 3])
        series, metrics = run(sc)
        self.assertLess(np.linalg.norm(series.w[-1] - W_STAR), 1e-3)
        self.assertIsNone(metrics.final_K_error)

        n = sc.corners.n
        lambda_, alpha = sc.id_cfg.lambda_, sc.id_cfg.alpha
        worst = 0.0
        for k in range(0, series.t.size, 7):
            Phi = series.Phi[k]
            z = -lambda_ * Phi[:n] + series.x_p[k]
            ms2 = 1.0 + alpha * Phi @ Phi
            em = epsilons(z, corner_outputs(sc.corners, Phi), ms2)
            e_z = z - sc.plant.theta @ Phi
            assert_allclose(e_z, series.e_z[k], atol=1e-12)
            worst = max(worst, error_identity_residual(em.E, em.epsN, e_z, ms2, W_STAR[:-1]))
        self.assertLessEqual(worst, 1e-10)

    def test_energy_bound_with_zero_input(self):
        cs = CornerSet.from_arrays([[[-1.0, 0.2], [0.2, -2.0]], [[-2.0, 0.0], [0.0, -1.0]]], [[[1.0], [0.0]], [[0.0], [1.0]]])
        sc = identification_scenario(
            cs, [0.5, 0.5], [0.5, 0.5], T_end=5.0, input=ReferenceInputSpec(channels=(InputChannel(),))
        )
        series, _ = run(sc)
        self.assertTrue(np.all(series.u == 0.0))
        bound = 1.1 * np.exp(-1.4 * series.t) * np.linalg.norm(sc.x_p0)
        self.assertTrue(np.all(np.linalg.norm(series.x_p, axis=1) <= bound))

    def test_v1_unavailable_outside_hull(self):
        cs = CornerSet(corners=three_corners().corners[:2])
        sc = identification_scenario(cs, [1.2, -0.2], [0.5, 0.5], T_end=2.0)
        with self.assertLogs("blendmrac.simulator", level="WARNING"):
            series, _ = run(sc)
        self.assertTrue(np.all(np.isnan(series.V_1)))
        self.assertNotIn("v1_non_increasing", check_invariants(series, sc))

    def test_unprojected_law_keeps_sum(self):
        cs = CornerSet(corners=three_corners().corners[:2])
        sc = identification_scenario(cs, [0.5, 0.5], [1.0, 0.0], T_end=10.0)
        sc = Scenario.model_validate(
            {**dict(sc), "id_cfg": IdentifierConfig.scalar(1.0, 0.01, 5.0, 1, projection=False)}
        )
        series, _ = run(sc)
        checks = check_invariants(series, sc)
        self.assertTrue(checks["weights_sum_to_one"])
        self.assertNotIn("pi_invariant", checks)

    def test_divergence_reports_time(self):
        cs = CornerSet(corners=three_corners().corners[:2])
        sc = identification_scenario(cs, [0.5, 0.5], [0.5, 0.5], T_end=30.0)
        sc = Scenario.model_validate(
            {
                **dict(sc),
                "plant": SystemMatrices(A=[[60.0, 0.0], [0.0, 60.0]], B=[[1.0], [1.0]]),
                "id_cfg": IdentifierConfig.scalar(1.0, 0.01, 5.0, 1, projection=False),
            }
        )
        with self.assertRaises(NumericalDivergence) as ctx:
            run(sc)
        self.assertGreater(ctx.exception.time, 0.0)
        self.assertLess(ctx.exception.time, 30.0)


class TestInvariants(unittest.TestCase):
    KEYS = (
        "finite",
        "weights_sum_to_one",
        "pi_invariant",
        "v1_non_increasing",
        "ez_decay_rate",
        "corner_matching_residuals",
        "lyapunov_residual",
        "pinv_left_inverse",
        "rank_maintained",
    )

    def test_random_scenarios(self):
        for seed in (0, 1):
            sc = random_scenario(seed)
            series, _ = run(sc)
            checks = check_invariants(series, sc)
            for key in self.KEYS:
                self.assertTrue(checks[key], f"{key} failed for seed {seed}")

    def test_three_state_short_run(self):
        sc = three_state_scenario(dt=2e-3, T_end=4.0)
        series, _ = run(sc)
        checks = check_invariants(series, sc)
        for key in ("finite", "weights_sum_to_one", "pi_invariant", "ez_decay_rate", "corner_matching_residuals"):
            self.assertTrue(checks[key], key)
        self.assertTrue(checks["lyapunov_residual"])
        self.assertTrue(np.all(np.isfinite(series.V_1)))

    def test_singular_blend_skips_left_inverse(self):
        sc = input_gain_scenario(T_end=1.0)
        series, _ = run(sc)
        b = sc.corners.B_stack[:, 0, 0]
        singular = np.array([b[1], -b[0]]) / (b[1] - b[0])
        w = series.w.copy()
        w[: w.shape[0] // 2] = singular
        checks = check_invariants(series.model_copy(update={"w": w}), sc)
        self.assertTrue(checks["pinv_left_inverse"])


class TestConvergence(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.runs = []
        for seed in range(5):
            sc = random_scenario(seed, T_end=100.0, gamma=50.0)
            cls.runs.append((sc, run(sc)[0]))

    def test_parameter_error(self):
        for sc, series in self.runs:
            self.assertLess(series.theta_err[-1], 1e-2, sc.name)

    def test_prediction_error_tail(self):
        for sc, series in self.runs:
            n = sc.corners.n
            lambda_, alpha = sc.id_cfg.lambda_, sc.id_cfg.alpha
            tail = range(int(0.9 * series.t.size), series.t.size)
            residuals = []
            for k in tail:
                Phi = series.Phi[k]
                z = -lambda_ * Phi[:n] + series.x_p[k]
                ms2 = 1.0 + alpha * Phi @ Phi
                em = epsilons(z, corner_outputs(sc.corners, Phi), ms2)
                residuals.append(error_identity_residual(em.E, em.epsN, series.e_z[k], ms2, series.w[k][:-1]))
            self.assertLess(np.mean(residuals), 1e-4, sc.name)

    def test_baseline_gains_bounded(self):
        sc = input_gain_scenario(mode="single_model", T_end=60.0)
        series, _ = run(sc)
        self.assertTrue(np.all(np.isfinite(series.Khat)))
        self.assertTrue(np.all(np.isfinite(series.Lhat)))
        self.assertLess(np.max(np.linalg.norm(series.Khat, axis=(1, 2))), 10.0)
        self.assertLess(np.max(np.linalg.norm(series.Lhat, axis=(1, 2))), 10.0)


class TestCompare(unittest.TestCase):
    def setUp(self):
        self.sc = input_gain_scenario(T_end=10.0)

    def test_identical_runs(self):
        report = compare(self.sc, self.sc)
        self.assertEqual(report.slope_ratio, 1.0)
        self.assertTrue(report.initial_gains_identical)
        self.assertEqual(report.published_slopes, (-0.0333, -0.0103))

    def test_swapped_ratio_is_reciprocal(self):
        single = self.sc.with_mode("single_model")
        report, (series_a, _), (series_b, _) = compare_runs(self.sc, single)
        swapped = compare(single, self.sc)
        self.assertAlmostEqual(report.slope_ratio * swapped.slope_ratio, 1.0, places=12)
        self.assertTrue(report.initial_gains_identical)
        assert_allclose(series_a.u[0], series_b.u[0], atol=1e-12)

    def test_mismatch(self):
        other = self.sc.model_copy(update={"dt": 0.02})
        with self.assertRaises(ScenarioMismatch) as ctx:
            compare(self.sc, other)
        self.assertEqual(ctx.exception.fields, ["dt"])

    def test_differences_ignore_mode(self):
        self.assertEqual(scenario_differences(self.sc, self.sc.with_mode("single_model")), [])


class TestBatch(unittest.TestCase):
    def test_parallel_matches_sequential(self):
        scenarios = [random_scenario(seed, T_end=2.0) for seed in (3, 4)]
        parallel = run_batch(scenarios, max_workers=2)
        for sc, (series, metrics) in zip(scenarios, parallel):
            expected, _ = run(sc)
            assert_allclose(series.err_norm, expected.err_norm, rtol=1e-12, atol=1e-15)
            self.assertEqual(series.N, sc.corners.N)


if __name__ == "__main__":
    unittest.main()
