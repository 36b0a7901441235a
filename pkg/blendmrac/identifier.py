"""Multiple-model identification of the convex weights of the plant.

The plant is filtered by 1/(s + lambda) into the parametric model
z = Theta_p Phi + e_z with e_z decaying at rate lambda; each corner predicts
z_i = Theta_i Phi and the weights are adapted by a projected gradient law on
the normalized prediction errors.
"""

import logging
from typing import List, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import expm
from scipy.optimize import nnls

from .exceptions import RangeError, StateOutsidePi
from .models import (
    CornerSet,
    EpsilonMatrix,
    IdentifierConfig,
    PEReport,
    Regressor,
    SystemMatrices,
    WeightEstimate,
)
from .util import DEFAULT_TOLERANCES, as_vector, clip_to_pi, in_pi

logger = logging.getLogger(__name__)


def initial_regressor(n: int, m: int) -> Regressor:
    """Regressor at t = 0: both filters start from zero."""
    return Regressor(phi1=np.zeros(n), phi2=np.zeros(m), z=np.zeros(n), Phi=np.zeros(n + m), ms2=1.0)


def make_regressor(phi1: np.ndarray, phi2: np.ndarray, x_p: np.ndarray, cfg: IdentifierConfig) -> Regressor:
    Phi = np.concatenate((phi1, phi2))
    return Regressor.model_construct(
        phi1=phi1,
        phi2=phi2,
        z=compute_z(phi1, x_p, cfg.lambda_),
        Phi=Phi,
        ms2=1.0 + cfg.alpha * float(Phi @ Phi),
    )


def filter_derivative(reg: Regressor, x_p: np.ndarray, u: np.ndarray, lambda_: float) -> Tuple[np.ndarray, np.ndarray]:
    """Filter dynamics: dphi1 = -lambda phi1 + x_p, dphi2 = -lambda phi2 + u."""
    return -lambda_ * reg.phi1 + x_p, -lambda_ * reg.phi2 + u


def compute_z(phi1: np.ndarray, x_p: np.ndarray, lambda_: float) -> np.ndarray:
    return -lambda_ * phi1 + x_p


def corner_outputs(cs: CornerSet, Phi: np.ndarray) -> np.ndarray:
    """z_i = Theta_i Phi for every corner, as rows of an (N, n) array."""
    thetas = cs.thetas if isinstance(cs, CornerSet) else cs
    return thetas @ Phi


def epsilons(z: np.ndarray, z_list: np.ndarray, ms2: float) -> EpsilonMatrix:
    """eps_i = (z - z_i) / ms2, and E with columns eps_j - eps_N."""
    eps = (z[None, :] - np.asarray(z_list)) / ms2
    E = (eps[:-1] - eps[-1]).T
    return EpsilonMatrix.model_construct(eps=eps, E=E)


def raw_update(E: np.ndarray, epsN: np.ndarray, wbar: np.ndarray, Gamma: np.ndarray) -> np.ndarray:
    """Unprojected gradient direction -Gamma (E^T E wbar + E^T eps_N)."""
    return -Gamma @ (E.T @ (E @ wbar + epsN))


def project_update(wbar: np.ndarray, v: np.ndarray, act_tol: float = DEFAULT_TOLERANCES.active_set) -> np.ndarray:
    """
    Euclidean projection of `v` onto the tangent cone of Pi at `wbar`.

    Active constraints define halfspaces a_k^T d <= 0 through the origin. The
    projection is v - A^T mu with mu the non-negative least-squares solution
    of A^T mu ~ v (Moreau decomposition into the cone and its polar).

    Raises:
        StateOutsidePi: If `wbar` is outside Pi beyond tolerance.
    """
    wbar = np.asarray(wbar, dtype=float)
    v = np.asarray(v, dtype=float)
    if not in_pi(wbar, tol=max(act_tol, DEFAULT_TOLERANCES.pi)):
        raise StateOutsidePi(f"weight estimate {wbar.tolist()} is outside Pi", source="identifier")

    k = wbar.shape[0]
    rows = []
    for i in np.flatnonzero(wbar <= act_tol):
        row = np.zeros(k)
        row[i] = -1.0
        rows.append(row)
    for i in np.flatnonzero(wbar >= 1.0 - act_tol):
        row = np.zeros(k)
        row[i] = 1.0
        rows.append(row)
    if wbar.sum() >= 1.0 - act_tol:
        rows.append(np.ones(k))
    if not rows:
        return v

    A = np.array(rows)
    if np.all(A @ v <= 0.0):
        return v
    mu = nnls(A.T, v)[0]
    return v - A.T @ mu


def step_weights(we: WeightEstimate, v_proj: np.ndarray, dt: float, clip: bool = True) -> WeightEstimate:
    """
    Advance the free weights by dt * v_proj and re-derive wN.

    With `clip` the result is projected onto Pi, which absorbs the drift of
    explicit integration at the boundary.
    """
    wbar = we.wbar + dt * np.asarray(v_proj, dtype=float)
    if not clip:
        return WeightEstimate.model_construct(wbar=wbar, wN=1.0 - float(wbar.sum()))
    return WeightEstimate.from_wbar(clip_to_pi(wbar))


def make_weight_estimate(w0) -> WeightEstimate:
    """Split a full weight vector into the Pi-constrained part and the derived last weight."""
    w0 = as_vector(w0, name="w0", source="identifier")
    return WeightEstimate.from_wbar(w0[:-1])


def blended_theta(cs: CornerSet, we: WeightEstimate) -> SystemMatrices:
    """Theta-hat = sum w_i Theta_i."""
    return SystemMatrices.from_theta(np.tensordot(we.w, cs.thetas, axes=1), cs.n)


def weight_errors(thetas: np.ndarray, reg: Regressor) -> EpsilonMatrix:
    """Normalized corner errors of one regressor sample."""
    return epsilons(reg.z, corner_outputs(thetas, reg.Phi), reg.ms2)


def frozen_weight_step(E: np.ndarray, epsN: np.ndarray, wbar: np.ndarray, Gamma: np.ndarray, dt: float) -> np.ndarray:
    """
    wbar after dt of the unprojected law with E and eps_N held fixed.

    The frozen law is affine in wbar; the step is the exponential of its
    augmented generator, exact for any stiffness of Gamma E^T E.
    """
    k = wbar.shape[0]
    generator = np.zeros((k + 1, k + 1))
    generator[:k, :k] = -Gamma @ E.T @ E
    generator[:k, k] = -Gamma @ E.T @ epsN
    flow = expm(dt * generator)
    return flow[:k, :k] @ wbar + flow[:k, k]


def advance_weights(
    we: WeightEstimate, E: np.ndarray, epsN: np.ndarray, Gamma: np.ndarray, dt: float, projection: bool = True
) -> WeightEstimate:
    """
    Advance the weight estimate over one grid step with E and eps_N held fixed.

    Steps that stay inside Pi take the exact frozen step. A step that starts
    on an active face or would leave Pi is split into projected sub-steps with
    dt_sub * |Gamma| |E|^2 <= 1, each clipped by `step_weights`.
    """
    wbar = we.wbar
    exact = frozen_weight_step(E, epsN, wbar, Gamma, dt)
    if not projection:
        return step_weights(we, (exact - wbar) / dt, dt, clip=False)

    v = raw_update(E, epsN, wbar, Gamma)
    if in_pi(exact) and np.array_equal(project_update(wbar, v), v):
        return step_weights(we, (exact - wbar) / dt, dt)

    stiffness = np.linalg.norm(Gamma, 2) * np.linalg.norm(E, 2) ** 2
    count = max(1, int(np.ceil(dt * stiffness)))
    h = dt / count
    for _ in range(count):
        v = project_update(we.wbar, raw_update(E, epsN, we.wbar, Gamma))
        we = step_weights(we, v, h)
    logger.debug("boundary weight step split into %d sub-steps", count)
    return we


def error_identity_residual(E: np.ndarray, epsN: np.ndarray, ez: np.ndarray, ms2: float, wbar_star: np.ndarray) -> float:
    """|| E wbar* - (e_z / ms2 - eps_N) ||, zero for any exact representation wbar*."""
    return float(np.linalg.norm(E @ wbar_star - (ez / ms2 - epsN)))


def pe_window_gram(times: np.ndarray, Phi_series: np.ndarray, t0: float, T: float) -> PEReport:
    """
    Extreme eigenvalues of the trapezoid-rule Gram integral of Phi Phi^T over [t0, t0 + T].

    Raises:
        RangeError: If the window is not covered by the series.
    """
    times = np.asarray(times, dtype=float)
    Phi_series = np.asarray(Phi_series, dtype=float)
    if Phi_series.ndim == 1:
        Phi_series = Phi_series[:, None]
    slack = 1e-9 * max(1.0, abs(t0) + T)
    if t0 < times[0] - slack or t0 + T > times[-1] + slack:
        raise RangeError(
            f"window [{t0}, {t0 + T}] exceeds series extent [{times[0]}, {times[-1]}]", source="identifier"
        )
    mask = (times >= t0 - slack) & (times <= t0 + T + slack)
    window_times = times[mask]
    window_phi = Phi_series[mask]
    outer = np.einsum("ti,tj->tij", window_phi, window_phi)
    gram = trapezoid(outer, window_times, axis=0)
    eigenvalues = np.linalg.eigvalsh(gram)
    return PEReport(t0=float(t0), window=float(T), alpha1=max(float(eigenvalues[0]), 0.0), alpha2=float(eigenvalues[-1]))


def pe_profile(times: np.ndarray, Phi_series: np.ndarray, window: float, stride: float = None) -> List[PEReport]:
    """PE reports over consecutive windows of length `window` (stride defaults to the window)."""
    stride = window if stride is None else stride
    reports = []
    t0 = float(times[0])
    end = float(times[-1])
    while t0 + window <= end + 1e-9 * max(1.0, end):
        reports.append(pe_window_gram(times, Phi_series, t0, window))
        t0 += stride
    if not reports:
        logger.warning("series shorter than one PE window of %.3f s", window)
    return reports
