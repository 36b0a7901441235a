"""
YAML scenario documents.

A document is parsed into `ScenarioDocument` (strict schema, unknown keys
rejected), then built into a validated `Scenario`. Errors carry the line of
the offending entry.
"""

import hashlib
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import ScenarioFileError
from .matpoly import DEFAULT_CAP, enumerate_corner_set, refine_matching_polytope
from .models import (
    BaselineDirection,
    ControllerMode,
    CornerSet,
    EntryBounds,
    IdentifierConfig,
    MatchingTarget,
    ReferenceInputSpec,
    Scenario,
    SystemMatrices,
    WeightVector,
)

logger = logging.getLogger(__name__)

Matrix = List[List[float]]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MatrixPairDoc(_Section):
    A: Matrix
    B: Matrix


class BoundsDoc(_Section):
    A_min: Matrix
    A_max: Matrix
    B_min: Matrix
    B_max: Matrix


class CornersDoc(_Section):
    A: Optional[List[Matrix]] = None
    B: Optional[List[Matrix]] = None
    bounds: Optional[BoundsDoc] = None
    cap: int = DEFAULT_CAP
    refine: bool = False

    @model_validator(mode="after")
    def _one_source(self):
        explicit = self.A is not None or self.B is not None
        if explicit == (self.bounds is not None):
            raise ValueError("give either corner lists A and B, or bounds")
        if explicit and (self.A is None or self.B is None):
            raise ValueError("corner lists need both A and B")
        return self


class IdentifierDoc(_Section):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    lambda_: float = Field(alias="lambda")
    alpha: float
    gamma: Union[float, Matrix]
    w0: Optional[List[float]] = None
    projection: bool = True


class ControllerDoc(_Section):
    mode: ControllerMode = "mmrac"
    Q: Optional[Matrix] = None
    gamma_K: float = 2.0
    gamma_L: float = 2.0
    baseline_direction: BaselineDirection = "initial_estimate"


class SimulationDoc(_Section):
    dt: float
    t_end: float
    seed: int = 0
    x_p0: List[float]
    x_r0: Optional[List[float]] = None
    fit_window: Optional[Tuple[float, float]] = None
    pe_window: float = 2.0 * np.pi


class ScenarioDocument(_Section):
    name: str = "scenario"
    plant: MatrixPairDoc
    reference: MatrixPairDoc
    corners: CornersDoc
    identifier: IdentifierDoc
    controller: ControllerDoc = ControllerDoc()
    simulation: SimulationDoc
    input: ReferenceInputSpec


def _line_index(node: yaml.Node, path: Tuple = (), index: Optional[Dict[Tuple, int]] = None) -> Dict[Tuple, int]:
    """Map every key path of a composed YAML tree to its 1-based line."""
    index = {} if index is None else index
    index[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            child = path + (key_node.value,)
            _line_index(value_node, child, index)
            index[child] = key_node.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for position, item in enumerate(node.value):
            _line_index(item, path + (position,), index)
    return index


def _line_for(loc: Tuple, lines: Dict[Tuple, int]) -> Optional[int]:
    for length in range(len(loc), -1, -1):
        if tuple(loc[:length]) in lines:
            return lines[tuple(loc[:length])]
    return None


def parse_document(text: str, path: Optional[str] = None) -> ScenarioDocument:
    """
    Parse and schema-check a scenario document.

    Raises:
        ScenarioFileError: On YAML syntax errors or schema violations, with the line number.
    """
    try:
        raw = yaml.safe_load(text)
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as error:
        mark = getattr(error, "problem_mark", None)
        raise ScenarioFileError(f"invalid YAML: {error}", line=mark.line + 1 if mark else None, path=path)
    if not isinstance(raw, dict):
        raise ScenarioFileError("document must be a mapping", line=1, path=path)

    try:
        return ScenarioDocument.model_validate(raw)
    except ValidationError as error:
        first = error.errors()[0]
        loc = first["loc"]
        where = ".".join(str(part) for part in loc) or "<root>"
        raise ScenarioFileError(f"{where}: {first['msg']}", line=_line_for(loc, _line_index(root)), path=path)


def load_document(path: Union[str, Path]) -> ScenarioDocument:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as error:
        raise ScenarioFileError(f"cannot read scenario: {error.strerror}", path=str(path))
    return parse_document(text, path=str(path))


def apply_overrides(
    doc: ScenarioDocument, mode: Optional[str] = None, dt: Optional[float] = None, t_end: Optional[float] = None
) -> ScenarioDocument:
    """Command-line overrides of the controller mode and the time grid."""
    controller = doc.controller if mode is None else doc.controller.model_copy(update={"mode": mode})
    updates = {}
    if dt is not None:
        updates["dt"] = dt
    if t_end is not None:
        updates["t_end"] = t_end
    simulation = doc.simulation.model_copy(update=updates)
    return doc.model_copy(update={"controller": controller, "simulation": simulation})


def build_target(doc: ScenarioDocument) -> MatchingTarget:
    return MatchingTarget(A_r=doc.reference.A, B_r=doc.reference.B)


def build_corner_set(doc: ScenarioDocument) -> CornerSet:
    """Explicit corners as listed, or every corner of the entry bounds."""
    corners = doc.corners
    if corners.bounds is not None:
        return enumerate_corner_set(EntryBounds(**corners.bounds.model_dump()), cap=corners.cap)
    return CornerSet.from_arrays(corners.A, corners.B)


def build_scenario(doc: ScenarioDocument) -> Scenario:
    """
    Turn a parsed document into a validated scenario.

    With `corners.refine` the corner set is replaced by its matching
    refinement; a `w0` that no longer fits is reset to uniform weights.
    """
    target = build_target(doc)
    cs = build_corner_set(doc)
    if doc.corners.refine:
        cs, _ = refine_matching_polytope(cs, target)

    ident = doc.identifier
    w0 = ident.w0
    if w0 is None:
        w0 = [1.0 / cs.N] * cs.N
    elif len(w0) != cs.N and doc.corners.refine:
        logger.warning("w0 has %d entries but refinement left %d corners; using uniform weights", len(w0), cs.N)
        w0 = [1.0 / cs.N] * cs.N

    gamma = ident.gamma
    Gamma = gamma * np.eye(cs.N - 1) if isinstance(gamma, (int, float)) else gamma
    sim = doc.simulation
    n = cs.n
    return Scenario(
        name=doc.name,
        plant=SystemMatrices(A=doc.plant.A, B=doc.plant.B),
        target=target,
        corners=cs,
        id_cfg=IdentifierConfig(lambda_=ident.lambda_, alpha=ident.alpha, Gamma=Gamma, projection=ident.projection),
        controller_mode=doc.controller.mode,
        input=doc.input,
        x_p0=sim.x_p0,
        x_r0=sim.x_r0 if sim.x_r0 is not None else np.zeros(n),
        w0=WeightVector(w=w0),
        dt=sim.dt,
        T_end=sim.t_end,
        seed=sim.seed,
        Q=doc.controller.Q,
        gamma_K=doc.controller.gamma_K,
        gamma_L=doc.controller.gamma_L,
        baseline_direction=doc.controller.baseline_direction,
        fit_window=sim.fit_window,
        pe_window=sim.pe_window,
    )


def load_scenario(path: Union[str, Path], **overrides) -> Scenario:
    return build_scenario(apply_overrides(load_document(path), **overrides))


def with_corners(doc: ScenarioDocument, cs: CornerSet) -> ScenarioDocument:
    """The same document with an explicit, already refined corner list."""
    corners = CornersDoc(A=[c.A.tolist() for c in cs.corners], B=[c.B.tolist() for c in cs.corners])
    identifier = doc.identifier
    if identifier.w0 is not None and len(identifier.w0) != cs.N:
        identifier = identifier.model_copy(update={"w0": None})
    return doc.model_copy(update={"corners": corners, "identifier": identifier})


def scenario_to_document(sc: Scenario) -> ScenarioDocument:
    """Canonical document of a scenario: explicit corners, scalar gamma when Gamma is a multiple of I."""
    G = sc.id_cfg.Gamma
    gamma = float(G[0, 0]) if np.array_equal(G, G[0, 0] * np.eye(G.shape[0])) else G.tolist()
    return ScenarioDocument(
        name=sc.name,
        plant=MatrixPairDoc(A=sc.plant.A.tolist(), B=sc.plant.B.tolist()),
        reference=MatrixPairDoc(A=sc.target.A_r.tolist(), B=sc.target.B_r.tolist()),
        corners=CornersDoc(A=[c.A.tolist() for c in sc.corners.corners], B=[c.B.tolist() for c in sc.corners.corners]),
        identifier=IdentifierDoc(
            lambda_=sc.id_cfg.lambda_, alpha=sc.id_cfg.alpha, gamma=gamma, w0=sc.w0.w.tolist(), projection=sc.id_cfg.projection
        ),
        controller=ControllerDoc(
            mode=sc.controller_mode,
            Q=None if sc.Q is None else sc.Q.tolist(),
            gamma_K=sc.gamma_K,
            gamma_L=sc.gamma_L,
            baseline_direction=sc.baseline_direction,
        ),
        simulation=SimulationDoc(
            dt=sc.dt,
            t_end=sc.T_end,
            seed=sc.seed,
            x_p0=sc.x_p0.tolist(),
            x_r0=sc.x_r0.tolist(),
            fit_window=sc.fit_window,
            pe_window=sc.pe_window,
        ),
        input=sc.input,
    )


def dump_document(doc: ScenarioDocument) -> str:
    data = doc.model_dump(mode="json", by_alias=True, exclude_none=True)
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=None)


def write_document(doc: ScenarioDocument, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(dump_document(doc))
    return path


def write_scenario(sc: Scenario, path: Union[str, Path]) -> Path:
    return write_document(scenario_to_document(sc), path)


def scenario_hash(sc: Scenario) -> str:
    """sha256 of the canonical document text."""
    return hashlib.sha256(dump_document(scenario_to_document(sc)).encode()).hexdigest()
