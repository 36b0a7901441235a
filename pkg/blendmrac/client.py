from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from .controller import gain_schedule
from .matpoly import refine_matching_polytope, verify_rank_condition
from .models import (
    ComparisonReport,
    CornerSet,
    GainSchedule,
    IdentifierConfig,
    Metrics,
    RankReport,
    Scenario,
    WeightVector,
)
from .scenario_file import load_scenario
from .simulator import TimeSeries, check_invariants, compare, run


class BlendMRAC:
    """
    The BlendMRAC class bundles a scenario with the operations run on it.

    Args:
        scenario (Scenario): The validated scenario to work on.

    Attributes:
        scenario: The current scenario; `refine` replaces its corner set.
        gains: The per-corner matching gains of the current corner set.

    Methods:
        refine: Replaces the corners with their matching refinement.
        simulate: Runs the scenario, optionally in another controller mode.
        compare: Runs MMRAC against the single-model baseline.
    """

    def __init__(self, scenario: Scenario):
        self.scenario = scenario

    @classmethod
    def from_file(cls, path: Union[str, Path], **overrides) -> "BlendMRAC":
        """
        Load a YAML scenario.

        Args:
            path: The scenario document.
            **overrides: `mode`, `dt` or `t_end` replacing the document values.

        Raises:
            ScenarioFileError: If the document does not parse or validate.
        """
        return cls(load_scenario(path, **overrides))

    @property
    def gains(self) -> GainSchedule:
        return gain_schedule(self.scenario.corners, self.scenario.target)

    def rank_report(self, sample_count: int = 10000) -> RankReport:
        return verify_rank_condition(self.scenario.corners, sample_count=sample_count, seed=self.scenario.seed)

    def refine(self) -> Tuple[CornerSet, List[WeightVector]]:
        """
        Refine the corner set to the matching polytope and keep it.

        The weight vector resets to uniform when the corner count changes.
        """
        sc = self.scenario
        refined, witnesses = refine_matching_polytope(sc.corners, sc.target)
        update = {"corners": refined}
        if refined.N != sc.corners.N:
            update["w0"] = WeightVector(w=[1.0 / refined.N] * refined.N)
            cfg = sc.id_cfg
            update["id_cfg"] = IdentifierConfig(
                lambda_=cfg.lambda_, alpha=cfg.alpha, Gamma=cfg.Gamma[0, 0] * np.eye(refined.N - 1), projection=cfg.projection
            )
        self.scenario = Scenario.model_validate({**dict(sc), **update})
        return refined, witnesses

    def simulate(self, mode: Optional[str] = None) -> Tuple[TimeSeries, Metrics]:
        sc = self.scenario if mode is None else self.scenario.with_mode(mode)
        return run(sc)

    def check(self, series: TimeSeries) -> dict:
        return check_invariants(series, self.scenario)

    def compare(self) -> ComparisonReport:
        return compare(self.scenario.with_mode("mmrac"), self.scenario.with_mode("single_model"))
