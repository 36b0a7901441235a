from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from .exceptions import DimensionError


class Tolerances(BaseModel):
    """Numerical tolerances shared by every module."""

    model_config = ConfigDict(frozen=True)

    hurwitz: float = 1e-9
    match: float = 1e-8
    rank: float = 1e-9
    vertex_dedupe: float = 1e-8
    basic_feasibility: float = 1e-10
    active_set: float = 1e-9
    pi: float = 1e-10
    floor_eps: float = 1e-12


DEFAULT_TOLERANCES = Tolerances()


def as_matrix(value: Any, name: str = "matrix", source: str = "blendmrac") -> np.ndarray:
    """Coerce `value` into a read-only, finite, 2-D float array."""
    array = np.array(value, dtype=float)
    if array.ndim == 1 and array.size > 0:
        array = array.reshape(-1, 1)
    if array.ndim != 2 or array.size == 0:
        raise DimensionError(f"{name} must be a non-empty 2-D matrix, got shape {array.shape}", source=source)
    if not np.all(np.isfinite(array)):
        raise DimensionError(f"{name} has non-finite entries", source=source)
    array.setflags(write=False)
    return array


def as_vector(value: Any, name: str = "vector", size: Optional[int] = None, source: str = "blendmrac") -> np.ndarray:
    """Coerce `value` into a read-only, finite, 1-D float array."""
    array = np.array(value, dtype=float).reshape(-1)
    if size is not None and array.shape[0] != size:
        raise DimensionError(f"{name} must have length {size}, got {array.shape[0]}", source=source)
    if not np.all(np.isfinite(array)):
        raise DimensionError(f"{name} has non-finite entries", source=source)
    array.setflags(write=False)
    return array


def project_simplex(v: np.ndarray, z: float = 1.0) -> np.ndarray:
    """
    Euclidean projection onto the scaled simplex {y >= 0, sum(y) = z}.

    Sort-and-threshold algorithm: the projection is max(v - theta, 0) with
    theta chosen so the result sums to z.
    """
    v = np.asarray(v, dtype=float).ravel()
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u) - z
    ind = np.arange(1, v.shape[0] + 1)
    cond = u - cssv / ind > 0
    rho = np.count_nonzero(cond)
    theta = cssv[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def clip_to_pi(wbar: np.ndarray) -> np.ndarray:
    """
    Exact Euclidean projection onto Pi = {w in [0, 1]^k : sum(w) <= 1}.

    The upper bounds are implied by non-negativity and the sum constraint, so
    the projection is the positive part when that already sums to at most one,
    and the simplex projection otherwise.
    """
    wbar = np.asarray(wbar, dtype=float).ravel()
    positive = np.maximum(wbar, 0.0)
    if positive.sum() <= 1.0:
        return positive
    return project_simplex(wbar, 1.0)


def in_pi(wbar: np.ndarray, tol: float = DEFAULT_TOLERANCES.pi) -> bool:
    wbar = np.asarray(wbar, dtype=float)
    return bool(np.all(wbar >= -tol) and np.all(wbar <= 1.0 + tol) and wbar.sum() <= 1.0 + tol)


def stack_theta(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.hstack((A, B))
