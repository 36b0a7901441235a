"""Corner sets of matrix polytopes: construction, rank certification and refinement
to the matching set of a reference model."""

import itertools
import logging
from math import comb
from typing import List, Tuple

import numpy as np
from scipy.optimize import linprog

from .exceptions import (
    AssumptionViolated,
    CapacityExceeded,
    DegeneratePolytope,
    DimensionError,
    MatchingInfeasible,
    NotInHull,
    SolverFailure,
)
from .models import (
    CornerSet,
    EntryBounds,
    GainPair,
    MatchingTarget,
    RankReport,
    SystemMatrices,
    WeightVector,
    spectral_abscissa,
)
from .util import DEFAULT_TOLERANCES

logger = logging.getLogger(__name__)

DEFAULT_CAP = 4096
MAX_BASES = 2_000_000


def hurwitz_check(A, tol: float = DEFAULT_TOLERANCES.hurwitz) -> bool:
    """True iff every eigenvalue of `A` has real part below -tol."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"hurwitz_check needs a square matrix, got {A.shape}", source="matpoly")
    return spectral_abscissa(A) < -tol


def enumerate_corner_set(bounds: EntryBounds, cap: int = DEFAULT_CAP) -> CornerSet:
    """
    Every system matrix whose entries each sit at their lower or upper bound.

    Entries with equal bounds do not double the count, so the result has
    2**(number of entries with min < max) corners.

    Raises:
        CapacityExceeded: If that count is above `cap`.
        DegeneratePolytope: If no entry is free (a single corner).
    """
    n = bounds.A_min.shape[0]
    lo = np.hstack((bounds.A_min, bounds.B_min))
    hi = np.hstack((bounds.A_max, bounds.B_max))
    free = np.flatnonzero((hi > lo).ravel())
    count = 2 ** len(free)
    if count > cap:
        raise CapacityExceeded(count, cap)

    corners = []
    for choice in itertools.product((False, True), repeat=len(free)):
        theta = lo.copy().ravel()
        theta[free[list(choice)]] = hi.ravel()[free[list(choice)]]
        corners.append(SystemMatrices.from_theta(theta.reshape(lo.shape), n))
    logger.debug("enumerated %d corners from %d free entries", count, len(free))
    return CornerSet(corners=tuple(corners))


def verify_rank_condition(cs: CornerSet, sample_count: int = 10000, seed: int = 0, tol: float = DEFAULT_TOLERANCES.rank) -> RankReport:
    """
    Check that every convex combination of the corner input matrices has full column rank.

    Single-input sets are decided exactly: a combination loses rank iff the
    zero vector is in the convex hull of the B_i, which is an LP feasibility
    question. Multi-input sets are checked at the vertices, edge midpoints and
    `sample_count` uniform draws from the weight simplex.

    Raises:
        SolverFailure: If the single-input LP ends neither optimal nor infeasible.
    """
    N, m = cs.N, cs.m
    B = cs.B_stack
    if m == 1:
        A_eq = np.vstack((B[:, :, 0].T, np.ones((1, N))))
        b_eq = np.append(np.zeros(cs.n), 1.0)
        res = linprog(c=np.zeros(N), A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * N, method="highs")
        if res.status == 0:
            witness = WeightVector.normalized(res.x)
            logger.warning("zero input vector is a convex combination of the corners: w=%s", witness.w)
            return RankReport(verdict="violated", witness=tuple(witness.w.tolist()), min_sigma=0.0)
        if res.status != 2:
            raise SolverFailure(res.status, res.message)
        return RankReport(verdict="verified_exact")

    rng = np.random.default_rng(seed)
    vertices = np.eye(N)
    midpoints = np.array([(vertices[i] + vertices[j]) / 2 for i, j in itertools.combinations(range(N), 2)])
    samples = rng.dirichlet(np.ones(N), size=sample_count) if sample_count > 0 else np.empty((0, N))
    weights = np.vstack((vertices, midpoints, samples))

    blended = np.einsum("kN,Nij->kij", weights, B)
    sigma = np.linalg.svd(blended, compute_uv=False)[:, -1]
    worst = int(np.argmin(sigma))
    if sigma[worst] <= tol:
        logger.warning("convex combination with sigma_min=%.3e found", sigma[worst])
        return RankReport(verdict="violated", witness=tuple(weights[worst].tolist()), min_sigma=float(sigma[worst]))
    logger.debug("rank condition sampled at %d points, min sigma %.3e", len(weights), sigma[worst])
    return RankReport(verdict="verified_sampled", samples=sample_count, min_sigma=float(sigma[worst]))


def compute_gains(corner: SystemMatrices, target: MatchingTarget, tol: float = DEFAULT_TOLERANCES.match, index: int = None) -> GainPair:
    """
    Matching gains K = B^+(A_r - A), L = B^+ B_r for one corner.

    Raises:
        MatchingInfeasible: If either matching residual exceeds `tol`.
    """
    if (corner.n, corner.m) != (target.n, target.m):
        raise DimensionError("corner and reference shapes differ", source="matpoly")
    rhs = np.hstack((target.A_r - corner.A, target.B_r))
    if corner.m == corner.n:
        try:
            gains = np.linalg.solve(corner.B, rhs)
        except np.linalg.LinAlgError:
            raise MatchingInfeasible("input matrix is singular", corner_index=index)
    else:
        gains = np.linalg.lstsq(corner.B, rhs, rcond=None)[0]
    K, L = gains[:, : corner.n], gains[:, corner.n :]

    res_A = np.linalg.norm(corner.A + corner.B @ K - target.A_r)
    res_B = np.linalg.norm(corner.B @ L - target.B_r)
    if res_A > tol or res_B > tol:
        raise MatchingInfeasible(
            f"matching residuals {res_A:.3e} (A), {res_B:.3e} (B) exceed {tol:.1e}; corner is outside the matching set",
            corner_index=index,
        )
    return GainPair(K=K, L=L)


def true_gains(plant: SystemMatrices, target: MatchingTarget) -> GainPair:
    """K*, L* of the (simulated) plant itself."""
    return compute_gains(plant, target)


def range_projector(target: MatchingTarget) -> np.ndarray:
    """I - B_r B_r^+, the projector onto the orthogonal complement of image(B_r)."""
    return np.eye(target.n) - target.B_r @ np.linalg.pinv(target.B_r)


def matching_residual(theta: SystemMatrices, target: MatchingTarget) -> Tuple[float, float]:
    """(||P B||_F, ||P (A_r - A)||_F) with P the projector off image(B_r)."""
    P = range_projector(target)
    return float(np.linalg.norm(P @ theta.B)), float(np.linalg.norm(P @ (target.A_r - theta.A)))


def _matching_constraints(cs: CornerSet, target: MatchingTarget) -> Tuple[np.ndarray, np.ndarray]:
    """Rows G w = h encoding P(sum w_i B_i) = 0, P(sum w_i A_i) = P A_r and sum w_i = 1."""
    P = range_projector(target)
    PB = np.einsum("ij,Njk->Nik", P, cs.B_stack).reshape(cs.N, -1).T
    PA = np.einsum("ij,Njk->Nik", P, cs.A_stack).reshape(cs.N, -1).T
    G = np.vstack((PB, PA, np.ones((1, cs.N))))
    h = np.concatenate((np.zeros(PB.shape[0]), (P @ target.A_r).ravel(), [1.0]))
    return G, h


def _dedupe(vectors: List[np.ndarray], tol: float) -> List[int]:
    kept: List[int] = []
    for index, vector in enumerate(vectors):
        if all(np.linalg.norm(vector - vectors[j]) > tol for j in kept):
            kept.append(index)
    return kept


def _extreme_points(points: List[np.ndarray]) -> List[int]:
    """Indices of the points that are not convex combinations of the others."""
    flat = np.array([p.ravel() for p in points])
    kept = []
    for index in range(len(points)):
        others = np.delete(flat, index, axis=0)
        A_eq = np.vstack((others.T, np.ones((1, others.shape[0]))))
        b_eq = np.append(flat[index], 1.0)
        res = linprog(c=np.zeros(others.shape[0]), A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * others.shape[0], method="highs")
        if res.status != 0:
            kept.append(index)
    return kept


def refine_matching_polytope(
    cs: CornerSet, target: MatchingTarget, tol: float = DEFAULT_TOLERANCES.match
) -> Tuple[CornerSet, List[WeightVector]]:
    """
    Vertices of co(S) intersected with the matching set, as a new corner set.

    The intersection is computed in weight space: the feasible weights form
    {w >= 0, G w = h}, whose vertices are the non-negative basic solutions.
    Every basis of size rank(G) is tried. Duplicate weight vertices and
    duplicate matrices are merged, and images that fall inside the hull of
    the other images are dropped. With square input matrices every corner
    already matches and the set is returned as is.

    Returns:
        The refined corner set and one witness weight vector per refined corner.

    Raises:
        AssumptionViolated: If no convex combination of the corners matches.
        DegeneratePolytope: If fewer than two distinct refined corners remain.
    """
    tols = DEFAULT_TOLERANCES
    N = cs.N
    if cs.m == cs.n:
        for index, corner in enumerate(cs.corners):
            compute_gains(corner, target, tol=tol, index=index)
        logger.info("square input matrices: all %d corners already match", N)
        return cs, [WeightVector(w=row) for row in np.eye(N)]

    G, h = _matching_constraints(cs, target)

    feasibility = linprog(c=np.zeros(N), A_eq=G, b_eq=h, bounds=[(0, None)] * N, method="highs")
    if feasibility.status != 0:
        raise AssumptionViolated(
            "no convex combination of the corners satisfies the matching conditions", source="matpoly"
        )

    rank = int(np.linalg.matrix_rank(G))
    bases = comb(N, rank)
    if bases > MAX_BASES:
        raise CapacityExceeded(bases, MAX_BASES, what="bases")
    logger.debug("matching constraints: %d rows, rank %d, %d candidate bases", G.shape[0], rank, bases)

    scale = max(1.0, float(np.abs(G).max()))
    vertices: List[np.ndarray] = []
    for columns in itertools.combinations(range(N), rank):
        G_C = G[:, columns]
        x, _, col_rank, _ = np.linalg.lstsq(G_C, h, rcond=None)
        if col_rank < rank:
            continue
        if np.linalg.norm(G_C @ x - h) > 1e-9 * scale:
            continue
        if np.any(x < -tols.basic_feasibility):
            continue
        w = np.zeros(N)
        w[list(columns)] = np.maximum(x, 0.0)
        vertices.append(w / w.sum())

    vertices = [vertices[i] for i in _dedupe(vertices, tols.vertex_dedupe)]
    thetas = cs.thetas
    blended = [np.tensordot(w, thetas, axes=1) for w in vertices]
    kept = _dedupe(blended, tols.vertex_dedupe)
    if len(kept) > 2:
        kept = [kept[i] for i in _extreme_points([blended[i] for i in kept])]
    if len(kept) < 2:
        raise DegeneratePolytope(
            f"the matching intersection has {len(kept)} distinct vertex; at least 2 corners are needed",
            source="matpoly",
        )

    refined = CornerSet(corners=tuple(SystemMatrices.from_theta(blended[i], cs.n) for i in kept))
    witnesses = [WeightVector.normalized(vertices[i]) for i in kept]
    for index, corner in enumerate(refined.corners):
        compute_gains(corner, target, tol=tol, index=index)
    logger.info("refined %d corners to %d matching corners", N, refined.N)
    return refined, witnesses


def _margin_lp(theta: SystemMatrices, cs: CornerSet) -> Tuple[float, np.ndarray]:
    N = cs.N
    V = cs.thetas.reshape(N, -1).T
    A_eq = np.vstack((np.hstack((V, np.zeros((V.shape[0], 1)))), np.append(np.ones(N), 0.0)))
    b_eq = np.append(theta.theta.ravel(), 1.0)
    A_ub = np.hstack((-np.eye(N), np.ones((N, 1))))
    c = np.append(np.zeros(N), -1.0)
    res = linprog(c=c, A_ub=A_ub, b_ub=np.zeros(N), A_eq=A_eq, b_eq=b_eq, bounds=[(None, None)] * (N + 1), method="highs")
    if res.status == 2:
        raise NotInHull("system matrix is outside the affine hull of the corner set", source="matpoly")
    if res.status != 0:
        raise AssumptionViolated(f"interior-margin LP failed: {res.message}", source="matpoly")

    w = res.x[:N]
    G = A_eq[:, :N]
    w = w + np.linalg.lstsq(G, b_eq - G @ w, rcond=None)[0]
    return float(-res.fun), w


def relative_interior_margin(theta: SystemMatrices, cs: CornerSet) -> float:
    """
    Largest eps such that theta = sum w_i Theta_i with sum w = 1 and every w_i >= eps.

    Negative when theta is outside co(S), zero on its relative boundary.
    """
    return _margin_lp(theta, cs)[0]


def interior_witness(theta: SystemMatrices, cs: CornerSet) -> WeightVector:
    """The maximum-margin weights representing `theta`; requires theta in co(S)."""
    margin, w = _margin_lp(theta, cs)
    if margin < -1e-9:
        raise NotInHull(f"system matrix is outside co(S) (margin {margin:.3e})", source="matpoly")
    return WeightVector.normalized(w)
