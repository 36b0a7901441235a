from functools import cached_property
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .exceptions import AssumptionViolated, DegeneratePolytope, DimensionError, StateOutsidePi
from .util import DEFAULT_TOLERANCES, as_matrix, as_vector, in_pi

ControllerMode = Literal["mmrac", "single_model", "identification_only"]
BaselineDirection = Literal["initial_estimate", "reference"]


class ArrayModel(BaseModel):
    """Frozen pydantic model holding numpy arrays."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)


def spectral_abscissa(A: np.ndarray) -> float:
    return float(np.max(np.linalg.eigvals(A).real))


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


class SystemMatrices(ArrayModel):
    """A pair (A, B) representing Theta = [A B]: a plant, a corner model or a blended estimate."""

    A: np.ndarray
    B: np.ndarray

    @field_validator("A", "B", mode="before")
    @classmethod
    def _coerce(cls, value, info):
        return as_matrix(value, name=info.field_name, source="matpoly")

    @model_validator(mode="after")
    def _check_shapes(self):
        n, cols = self.A.shape
        if n != cols:
            raise DimensionError(f"A must be square, got {self.A.shape}", source="matpoly")
        if self.B.shape[0] != n:
            raise DimensionError(f"B must have {n} rows, got {self.B.shape[0]}", source="matpoly")
        if self.B.shape[1] > n:
            raise DimensionError(f"B must have at most {n} columns, got {self.B.shape[1]}", source="matpoly")
        return self

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def theta(self) -> np.ndarray:
        return np.hstack((self.A, self.B))

    @classmethod
    def from_theta(cls, theta: np.ndarray, n: int) -> "SystemMatrices":
        return cls(A=theta[:, :n], B=theta[:, n:])


class MatchingTarget(ArrayModel):
    """The reference model (A_r, B_r) every corner has to be matched to."""

    A_r: np.ndarray
    B_r: np.ndarray

    @field_validator("A_r", "B_r", mode="before")
    @classmethod
    def _coerce(cls, value, info):
        return as_matrix(value, name=info.field_name, source="matpoly")

    @model_validator(mode="after")
    def _check(self):
        n, cols = self.A_r.shape
        if n != cols or self.B_r.shape[0] != n:
            raise DimensionError(
                f"reference shapes inconsistent: A_r {self.A_r.shape}, B_r {self.B_r.shape}", source="matpoly"
            )
        if spectral_abscissa(self.A_r) >= -DEFAULT_TOLERANCES.hurwitz:
            raise AssumptionViolated("A_r must be Hurwitz", source="matpoly")
        if np.linalg.matrix_rank(self.B_r) < self.B_r.shape[1]:
            raise AssumptionViolated("B_r must have full column rank", source="matpoly")
        return self

    @property
    def n(self) -> int:
        return self.A_r.shape[0]

    @property
    def m(self) -> int:
        return self.B_r.shape[1]


class CornerSet(ArrayModel):
    """Ordered corner models spanning the uncertainty polytope."""

    corners: Tuple[SystemMatrices, ...]

    @model_validator(mode="after")
    def _check(self):
        if len(self.corners) < 2:
            raise DegeneratePolytope(f"a corner set needs at least 2 corners, got {len(self.corners)}", source="matpoly")
        shape = (self.corners[0].n, self.corners[0].m)
        for index, corner in enumerate(self.corners):
            if (corner.n, corner.m) != shape:
                raise DimensionError(
                    f"corner {index} has shape (n={corner.n}, m={corner.m}), expected {shape}", source="matpoly"
                )
        return self

    @classmethod
    def from_arrays(cls, A_list, B_list) -> "CornerSet":
        if len(A_list) != len(B_list):
            raise DimensionError(f"{len(A_list)} A matrices but {len(B_list)} B matrices", source="matpoly")
        return cls(corners=tuple(SystemMatrices(A=A, B=B) for A, B in zip(A_list, B_list)))

    def __len__(self) -> int:
        return len(self.corners)

    @property
    def N(self) -> int:
        return len(self.corners)

    @property
    def n(self) -> int:
        return self.corners[0].n

    @property
    def m(self) -> int:
        return self.corners[0].m

    @cached_property
    def thetas(self) -> np.ndarray:
        """Stacked corner matrices, shape (N, n, n+m)."""
        return _frozen(np.stack([corner.theta for corner in self.corners]))

    @cached_property
    def A_stack(self) -> np.ndarray:
        return _frozen(np.stack([corner.A for corner in self.corners]))

    @cached_property
    def B_stack(self) -> np.ndarray:
        return _frozen(np.stack([corner.B for corner in self.corners]))


class EntryBounds(ArrayModel):
    """Entrywise bounds A_min <= A <= A_max, B_min <= B <= B_max."""

    A_min: np.ndarray
    A_max: np.ndarray
    B_min: np.ndarray
    B_max: np.ndarray

    @field_validator("A_min", "A_max", "B_min", "B_max", mode="before")
    @classmethod
    def _coerce(cls, value, info):
        return as_matrix(value, name=info.field_name, source="matpoly")

    @model_validator(mode="after")
    def _check(self):
        SystemMatrices(A=self.A_min, B=self.B_min)
        if self.A_min.shape != self.A_max.shape or self.B_min.shape != self.B_max.shape:
            raise DimensionError("min and max bounds must share shapes", source="matpoly")
        if np.any(self.A_min > self.A_max) or np.any(self.B_min > self.B_max):
            raise DimensionError("entry bounds must satisfy min <= max", source="matpoly")
        return self


class GainPair(ArrayModel):
    """Matching gains (K, L) with A + B K = A_r and B L = B_r."""

    K: np.ndarray
    L: np.ndarray

    @field_validator("K", "L", mode="before")
    @classmethod
    def _coerce(cls, value, info):
        return as_matrix(value, name=info.field_name, source="matpoly")


class WeightVector(ArrayModel):
    """Convex weights: non-negative and summing to one."""

    w: np.ndarray

    @field_validator("w", mode="before")
    @classmethod
    def _coerce(cls, value):
        return as_vector(value, name="w", source="matpoly")

    @model_validator(mode="after")
    def _check(self):
        if abs(float(self.w.sum()) - 1.0) > 1e-12:
            raise DimensionError(f"weights must sum to 1, got {self.w.sum()!r}", source="matpoly")
        if np.any(self.w < -1e-12):
            raise DimensionError("weights must be non-negative", source="matpoly")
        return self

    @classmethod
    def normalized(cls, w) -> "WeightVector":
        """Clamp tiny negatives and renormalize LP output to exact convex weights."""
        w = np.maximum(np.asarray(w, dtype=float), 0.0)
        return cls(w=w / w.sum())


class IdentifierConfig(ArrayModel):
    """Tuning of the multiple-model identifier."""

    lambda_: float = Field(alias="lambda", gt=0.0)
    alpha: float = Field(gt=0.0)
    Gamma: np.ndarray
    projection: bool = True

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, populate_by_name=True)

    @field_validator("Gamma", mode="before")
    @classmethod
    def _coerce(cls, value):
        return as_matrix(value, name="Gamma", source="identifier")

    @model_validator(mode="after")
    def _check(self):
        G = self.Gamma
        if G.shape[0] != G.shape[1]:
            raise DimensionError(f"Gamma must be square, got {G.shape}", source="identifier")
        if np.max(np.abs(G - G.T)) > 1e-12:
            raise DimensionError("Gamma must be symmetric", source="identifier")
        if np.min(np.linalg.eigvalsh(G)) <= 0.0:
            raise DimensionError("Gamma must be positive definite", source="identifier")
        return self

    @classmethod
    def scalar(cls, lambda_: float, alpha: float, gamma: float, size: int, projection: bool = True):
        return cls(lambda_=lambda_, alpha=alpha, Gamma=gamma * np.eye(size), projection=projection)


class Regressor(ArrayModel):
    """Filter states and the quantities derived from them at one instant."""

    phi1: np.ndarray
    phi2: np.ndarray
    z: np.ndarray
    Phi: np.ndarray
    ms2: float = Field(ge=1.0)


class EpsilonMatrix(ArrayModel):
    """Normalized estimation errors eps_i (rows) and E = [eps_1 - eps_N, ...]."""

    eps: np.ndarray
    E: np.ndarray

    @property
    def epsN(self) -> np.ndarray:
        return self.eps[-1]


class WeightEstimate(ArrayModel):
    """Estimate w-hat split into the free part wbar (kept in Pi) and the derived wN."""

    wbar: np.ndarray
    wN: float

    @field_validator("wbar", mode="before")
    @classmethod
    def _coerce(cls, value):
        return as_vector(value, name="wbar", source="identifier")

    @model_validator(mode="after")
    def _check(self):
        if not in_pi(self.wbar):
            raise StateOutsidePi(f"weight estimate {self.wbar.tolist()} is outside Pi", source="identifier")
        return self

    @classmethod
    def from_wbar(cls, wbar) -> "WeightEstimate":
        wbar = as_vector(wbar, name="wbar", source="identifier")
        return cls(wbar=wbar, wN=1.0 - float(wbar.sum()))

    @property
    def w(self) -> np.ndarray:
        return np.append(self.wbar, self.wN)


class PEReport(BaseModel):
    """Windowed regressor Gram extremes."""

    model_config = ConfigDict(frozen=True)

    t0: float
    window: float
    alpha1: float
    alpha2: float


class GainSchedule(ArrayModel):
    """Per-corner matching gains, precomputed once per scenario."""

    gains: Tuple[GainPair, ...]

    @cached_property
    def K_stack(self) -> np.ndarray:
        return _frozen(np.stack([pair.K for pair in self.gains]))

    @cached_property
    def L_stack(self) -> np.ndarray:
        return _frozen(np.stack([pair.L for pair in self.gains]))


class ControllerState(ArrayModel):
    Khat: np.ndarray
    Lhat: np.ndarray
    Bhat: np.ndarray
    BhatPinv: np.ndarray
    sigma_min: float


class SinusoidTerm(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    amplitude: float
    frequency: float
    phase: float = 0.0


class InputChannel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    offset: float = 0.0
    terms: Tuple[SinusoidTerm, ...] = ()


class ReferenceInputSpec(BaseModel):
    """Per-channel sums of sinusoids plus a constant offset."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    channels: Tuple[InputChannel, ...]

    @property
    def m(self) -> int:
        return len(self.channels)

    def evaluate(self, t: float) -> np.ndarray:
        return np.array(
            [
                channel.offset + sum(term.amplitude * np.sin(term.frequency * t + term.phase) for term in channel.terms)
                for channel in self.channels
            ]
        )

    @classmethod
    def multisine(cls, m: int, frequencies: List[float], amplitude: float = 1.0) -> "ReferenceInputSpec":
        """Build a multisine per channel with phases staggered by channel index."""
        channels = []
        for k in range(m):
            terms = tuple(
                SinusoidTerm(amplitude=amplitude, frequency=f * (1.0 + 0.13 * k), phase=0.7 * k + 0.3 * j)
                for j, f in enumerate(frequencies)
            )
            channels.append(InputChannel(terms=terms))
        return cls(channels=tuple(channels))


class LyapunovCertificate(ArrayModel):
    """Pair (P, Q) with P A_r + A_r^T P + Q = 0."""

    Q: np.ndarray
    P: np.ndarray
    residual: float


class RankReport(BaseModel):
    """Outcome of the convex-combination rank check."""

    model_config = ConfigDict(frozen=True)

    verdict: Literal["verified_exact", "verified_sampled", "violated"]
    samples: Optional[int] = None
    witness: Optional[Tuple[float, ...]] = None
    min_sigma: Optional[float] = None

    @property
    def ok(self) -> bool:
        return self.verdict != "violated"


class Metrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    final_error_norm: float
    final_theta_error: float
    slope: Optional[float] = None
    fit_window: Tuple[float, float]
    peak_control_norm: float
    pe_alpha1: Optional[float] = None
    final_K_error: Optional[float] = None
    final_L_error: Optional[float] = None


class ComparisonReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    slope_mmrac: Optional[float]
    slope_single: Optional[float]
    slope_ratio: Optional[float]
    final_error_mmrac: float
    final_error_single: float
    peak_control_mmrac: float
    peak_control_single: float
    initial_gains_identical: bool
    published_slopes: Tuple[float, float] = (-0.0333, -0.0103)


class Scenario(ArrayModel):
    """Complete simulation specification."""

    name: str = "scenario"
    plant: SystemMatrices
    target: MatchingTarget
    corners: CornerSet
    id_cfg: IdentifierConfig
    controller_mode: ControllerMode = "mmrac"
    input: ReferenceInputSpec
    x_p0: np.ndarray
    x_r0: np.ndarray
    w0: WeightVector
    dt: float = Field(gt=0.0)
    T_end: float
    seed: int = 0
    Q: Optional[np.ndarray] = None
    gamma_K: float = 2.0
    gamma_L: float = 2.0
    baseline_direction: BaselineDirection = "initial_estimate"
    fit_window: Optional[Tuple[float, float]] = None
    pe_window: float = 2.0 * np.pi

    @field_validator("x_p0", "x_r0", mode="before")
    @classmethod
    def _coerce_vector(cls, value, info):
        return as_vector(value, name=info.field_name, source="simulator")

    @field_validator("Q", mode="before")
    @classmethod
    def _coerce_q(cls, value):
        return None if value is None else as_matrix(value, name="Q", source="controller")

    @model_validator(mode="after")
    def _check(self):
        n, m, N = self.corners.n, self.corners.m, self.corners.N
        problems = []
        if (self.plant.n, self.plant.m) != (n, m):
            problems.append(f"plant is (n={self.plant.n}, m={self.plant.m}), corners are (n={n}, m={m})")
        if (self.target.n, self.target.m) != (n, m):
            problems.append(f"reference is (n={self.target.n}, m={self.target.m}), corners are (n={n}, m={m})")
        if self.id_cfg.Gamma.shape != (N - 1, N - 1):
            problems.append(f"Gamma must be {N - 1}x{N - 1}, got {self.id_cfg.Gamma.shape}")
        if self.input.m != m:
            problems.append(f"input has {self.input.m} channels, expected {m}")
        if self.x_p0.shape[0] != n or self.x_r0.shape[0] != n:
            problems.append(f"initial states must have length {n}")
        if self.w0.w.shape[0] != N:
            problems.append(f"w0 must have length {N}, got {self.w0.w.shape[0]}")
        if self.Q is not None and self.Q.shape != (n, n):
            problems.append(f"Q must be {n}x{n}")
        if self.T_end < self.dt:
            problems.append("T_end must be at least dt")
        if problems:
            raise DimensionError("; ".join(problems), source="simulator")
        return self

    @property
    def n_samples(self) -> int:
        return int(np.floor(self.T_end / self.dt + 1e-9)) + 1

    def with_mode(self, mode: str) -> "Scenario":
        return self.model_copy(update={"controller_mode": mode})
