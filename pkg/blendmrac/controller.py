import logging
from functools import lru_cache
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy.linalg import solve, solve_continuous_lyapunov

from .exceptions import NUMERICAL_FAILURE, AssumptionViolated, BlendMRACException, RankCollapse
from .matpoly import compute_gains, hurwitz_check
from .models import (
    ControllerState,
    CornerSet,
    GainSchedule,
    LyapunovCertificate,
    MatchingTarget,
    ReferenceInputSpec,
    WeightEstimate,
)
from .util import DEFAULT_TOLERANCES, as_matrix

logger = logging.getLogger(__name__)

Weights = Union[WeightEstimate, np.ndarray]


def _full_weights(we: Weights) -> np.ndarray:
    if isinstance(we, WeightEstimate):
        return we.w
    return np.asarray(we, dtype=float)


def gain_schedule(cs: CornerSet, target: MatchingTarget, tol: float = DEFAULT_TOLERANCES.match) -> GainSchedule:
    """Matching gains of every corner, in corner order."""
    return GainSchedule(gains=tuple(compute_gains(corner, target, tol=tol, index=i) for i, corner in enumerate(cs.corners)))


def blended_input_matrix(
    cs: CornerSet, we: Weights, tol: float = DEFAULT_TOLERANCES.rank
) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    B-hat = sum w_i B_i and its left inverse through the normal equations.

    Returns:
        (Bhat, BhatPinv, sigma_min) with sigma_min the smallest singular value of Bhat.

    Raises:
        RankCollapse: If sigma_min <= tol.
    """
    Bhat = np.tensordot(_full_weights(we), cs.B_stack, axes=1)
    gram = Bhat.T @ Bhat
    sigma_min = float(np.sqrt(max(np.linalg.eigvalsh(gram)[0], 0.0)))
    if sigma_min <= tol:
        raise RankCollapse(sigma_min, tol)
    BhatPinv = solve(gram, Bhat.T, assume_a="pos")
    return Bhat, BhatPinv, sigma_min


def blended_gains(cs: CornerSet, gs: GainSchedule, we: Weights, tol: float = DEFAULT_TOLERANCES.rank) -> ControllerState:
    """K-hat = B-hat^+ sum w_i B_i K_i and L-hat = B-hat^+ sum w_i B_i L_i."""
    w = _full_weights(we)
    Bhat, BhatPinv, sigma_min = blended_input_matrix(cs, w, tol=tol)
    BK = np.einsum("N,Nij,Njk->ik", w, cs.B_stack, gs.K_stack)
    BL = np.einsum("N,Nij,Njk->ik", w, cs.B_stack, gs.L_stack)
    return ControllerState.model_construct(
        Khat=BhatPinv @ BK, Lhat=BhatPinv @ BL, Bhat=Bhat, BhatPinv=BhatPinv, sigma_min=sigma_min
    )


def control(cstate: ControllerState, x_p: np.ndarray, r: np.ndarray) -> np.ndarray:
    return cstate.Khat @ x_p + cstate.Lhat @ r


def reference_derivative(A_r: np.ndarray, B_r: np.ndarray, x_r: np.ndarray, r: np.ndarray) -> np.ndarray:
    return A_r @ x_r + B_r @ r


def solve_lyapunov(A_r: np.ndarray, Q: Optional[np.ndarray] = None) -> LyapunovCertificate:
    """
    Solve P A_r + A_r^T P + Q = 0 for the symmetric positive definite P.

    Q defaults to the identity.

    Raises:
        AssumptionViolated: If A_r is not Hurwitz or Q is not symmetric positive definite.
    """
    A_r = as_matrix(A_r, name="A_r", source="controller")
    n = A_r.shape[0]
    Q = np.eye(n) if Q is None else as_matrix(Q, name="Q", source="controller")
    if not hurwitz_check(A_r):
        raise AssumptionViolated("A_r must be Hurwitz for a Lyapunov certificate", source="controller")
    if np.max(np.abs(Q - Q.T)) > 1e-12 or np.linalg.eigvalsh(Q)[0] <= 0.0:
        raise AssumptionViolated("Q must be symmetric positive definite", source="controller")

    P = solve_continuous_lyapunov(A_r.T, -Q)
    P = 0.5 * (P + P.T)
    residual = float(np.linalg.norm(P @ A_r + A_r.T @ P + Q))
    if residual > 1e-10 * max(1.0, float(np.linalg.norm(Q))):
        raise BlendMRACException(
            f"Lyapunov residual {residual:.3e} above 1e-10", source="controller", code=NUMERICAL_FAILURE
        )
    logger.debug("Lyapunov certificate: residual %.3e, min eig(P) %.3e", residual, np.linalg.eigvalsh(P)[0])
    return LyapunovCertificate(Q=Q, P=P, residual=residual)


def lyapunov_value(cert: LyapunovCertificate, e: np.ndarray) -> float:
    return float(e @ cert.P @ e)


def baseline_mrac_update(
    Khat: np.ndarray,
    Lhat: np.ndarray,
    e: np.ndarray,
    x_p: np.ndarray,
    r: np.ndarray,
    P: np.ndarray,
    B_d: np.ndarray,
    gamma_K: float = 2.0,
    gamma_L: float = 2.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Single-model direct MRAC gradient law.

    dK = -gamma_K B_d^T P e x_p^T and dL = -gamma_L B_d^T P e r^T, where B_d
    is the adaptation direction standing in for the unknown B_p.
    """
    s = B_d.T @ (P @ e)
    dK = -gamma_K * np.outer(s, x_p)
    dL = -gamma_L * np.outer(s, r)
    return dK.reshape(Khat.shape), dL.reshape(Lhat.shape)


@lru_cache(maxsize=64)
def compile_input(spec: ReferenceInputSpec) -> Callable[[float], np.ndarray]:
    """Flatten every sinusoid term into arrays so r(t) costs one vectorized sin."""
    offsets = np.array([channel.offset for channel in spec.channels])
    terms = [(k, term) for k, channel in enumerate(spec.channels) for term in channel.terms]
    if not terms:
        return lambda t: offsets.copy()

    channel = np.array([k for k, _ in terms])
    amplitude = np.array([term.amplitude for _, term in terms])
    frequency = np.array([term.frequency for _, term in terms])
    phase = np.array([term.phase for _, term in terms])
    m = len(spec.channels)

    def evaluate(t: float) -> np.ndarray:
        return offsets + np.bincount(channel, weights=amplitude * np.sin(frequency * t + phase), minlength=m)

    return evaluate


def reference_input(spec: ReferenceInputSpec, t: float) -> np.ndarray:
    """r(t) for the given input specification."""
    return compile_input(spec)(t)
