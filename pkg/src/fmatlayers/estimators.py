"""Correspondence-based fundamental matrix estimators.

Linear solvers (8-point, normalized 8-point, 7-point), algebraic
minimization over the epipole, and the robust RANSAC / LeMedS wrappers.
All outputs are canonical: unit Frobenius norm with the largest-magnitude
entry positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import (
    DegenerateConfiguration,
    DegeneratePoints,
    InsufficientCorrespondences,
    NoConsensus,
    RankDeficientInit,
    WrongSampleSize,
)
from .geometry import RANK_DEFICIENT_TOL, CorrSet, canonical, enforce_rank2, skew

NULLSPACE_GAP = 1e-9
IMAG_TOL = 1e-9


def design_matrix(corrs: CorrSet) -> np.ndarray:
    """Rows ``(x'x, x'y, x', y'x, y'y, y', x, y, 1)`` so that ``A @ F.ravel() = q^T F p``."""
    p, q = corrs.p, corrs.q
    return (q[:, :, None] * p[:, None, :]).reshape(len(corrs), 9)


def _padded_svd(A: np.ndarray):
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    s = np.concatenate([s, np.zeros(Vt.shape[0] - len(s))])
    return s, Vt


def _solve_linear(corrs: CorrSet) -> np.ndarray:
    if len(corrs) < 8:
        raise InsufficientCorrespondences(f"need at least 8 correspondences, got {len(corrs)}")
    s, Vt = _padded_svd(design_matrix(corrs))
    if s[0] == 0 or s[7] - s[8] <= NULLSPACE_GAP * s[0]:
        raise DegenerateConfiguration("least-squares null space of the design matrix is not unique")
    return Vt[8].reshape(3, 3)


def eight_point(corrs: CorrSet) -> np.ndarray:
    """Least-squares solution of ``A f = 0`` projected to rank two."""
    return canonical(enforce_rank2(_solve_linear(corrs)))


def hartley_normalize(points) -> Tuple[np.ndarray, np.ndarray]:
    """Similarity ``T`` moving the centroid to the origin at mean distance sqrt(2).

    Returns ``(T, transformed)`` where ``transformed`` is ``(n, 2)``.
    """
    xy = np.asarray(points, dtype=float)
    if xy.ndim == 2 and xy.shape[1] == 3:
        xy = xy[:, :2] / xy[:, 2:3]
    centroid = xy.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(xy - centroid, axis=1))
    if len(xy) < 2 or mean_dist == 0:
        raise DegeneratePoints("points coincide; cannot normalize")
    s = math.sqrt(2.0) / mean_dist
    T = np.array(
        [
            [s, 0.0, -s * centroid[0]],
            [0.0, s, -s * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )
    return T, (xy - centroid) * s


def _normalized_problem(corrs: CorrSet):
    T1, x1 = hartley_normalize(corrs.x1)
    T2, x2 = hartley_normalize(corrs.x2)
    return T1, T2, CorrSet(x1, x2)


def normalized_eight_point(corrs: CorrSet) -> np.ndarray:
    """Eight-point on Hartley-normalized coordinates, mapped back by ``T2^T F T1``."""
    if len(corrs) < 8:
        raise InsufficientCorrespondences(f"need at least 8 correspondences, got {len(corrs)}")
    T1, T2, normed = _normalized_problem(corrs)
    Fn = enforce_rank2(_solve_linear(normed))
    return canonical(T2.T @ Fn @ T1)


# column choices for the multilinear expansion of the determinant: bit j set
# takes column j from D (degree 1), otherwise from F2 (degree 0)
_COLUMN_MASKS = np.array([[mask >> j & 1 for j in range(3)] for mask in range(8)], dtype=bool)


def _det_cubic(F1: np.ndarray, F2: np.ndarray) -> np.ndarray:
    """Coefficients, highest degree first, of ``det(lam * F1 + (1 - lam) * F2)``.

    Accepts stacks ``(..., 3, 3)`` and returns ``(..., 4)``.
    """
    F1 = np.asarray(F1, dtype=float)
    F2 = np.asarray(F2, dtype=float)
    D = F1 - F2
    stacks = np.where(_COLUMN_MASKS[:, None, :], D[..., None, :, :], F2[..., None, :, :])
    d = np.linalg.det(stacks)
    # elementwise sums rather than a matmul: BLAS kernels vary with the batch size
    return np.stack(
        [d[..., 7], d[..., 3] + d[..., 5] + d[..., 6], d[..., 1] + d[..., 2] + d[..., 4], d[..., 0]],
        axis=-1,
    )


def _horner(coeffs, x: float):
    value = 0.0
    slope = 0.0
    for a in coeffs:
        slope = slope * x + value
        value = value * x + a
    return value, slope


def _real_roots(coeffs: np.ndarray) -> List[float]:
    nz = np.flatnonzero(np.abs(coeffs) > 1e-14 * np.abs(coeffs).max())
    coeffs = coeffs[nz[0]:]
    degree = len(coeffs) - 1
    if degree == 0:
        return []
    companion = np.zeros((degree, degree))
    companion[0, :] = -coeffs[1:] / coeffs[0]
    companion[np.arange(1, degree), np.arange(degree - 1)] = 1.0
    roots = np.linalg.eigvals(companion)
    real = []
    for z in roots:
        if abs(z.imag) <= IMAG_TOL * max(1.0, abs(z)):
            x = z.real
            # Newton polish against the cubic itself
            for _ in range(3):
                f, df = _horner(coeffs.tolist(), x)
                if df == 0:
                    break
                x -= f / df
            real.append(float(x))
    return sorted(real)


def _hartley_batch(xy: np.ndarray):
    """Batched :func:`hartley_normalize` over ``(m, k, 2)``; also flags coincident samples."""
    c = xy.mean(axis=1, keepdims=True)
    d = np.linalg.norm(xy - c, axis=2).mean(axis=1)
    ok = d > 0
    s = math.sqrt(2.0) / np.where(ok, d, 1.0)
    T = np.zeros((len(xy), 3, 3))
    T[:, 0, 0] = T[:, 1, 1] = s
    T[:, 0, 2] = -s * c[:, 0, 0]
    T[:, 1, 2] = -s * c[:, 0, 1]
    T[:, 2, 2] = 1.0
    return T, (xy - c) * s[:, None, None], ok


def _polished_cubic_roots(coeffs: np.ndarray) -> List[List[float]]:
    """Real roots of proper cubics ``(m, 4)``, matching :func:`_real_roots` row by row."""
    m = len(coeffs)
    companion = np.zeros((m, 3, 3))
    companion[:, 0, :] = -coeffs[:, 1:] / coeffs[:, :1]
    companion[:, 1, 0] = companion[:, 2, 1] = 1.0
    z = np.linalg.eigvals(companion)
    real = np.abs(z.imag) <= IMAG_TOL * np.maximum(1.0, np.abs(z))
    x = z.real.copy()
    for _ in range(3):
        f = np.zeros_like(x)
        df = np.zeros_like(x)
        for k in range(4):
            df = df * x + f
            f = f * x + coeffs[:, k : k + 1]
        safe = df != 0
        x = np.where(safe, x - f / np.where(safe, df, 1.0), x)
    return [sorted(float(v) for v in x[i][real[i]]) for i in range(m)]


def _seven_point_batch(x1: np.ndarray, x2: np.ndarray):
    """Seven-point solutions for ``m`` samples given as ``(m, 7, 2)`` point stacks.

    Returns ``(solutions, status)``: a list of canonical matrices per sample
    and a status string per sample (``"ok"``, ``"points"`` for coincident
    points, ``"nullspace"`` for a null space wider than two).
    """
    m = len(x1)
    T1, n1, ok1 = _hartley_batch(x1)
    T2, n2, ok2 = _hartley_batch(x2)
    ones = np.ones((m, 7, 1))
    p = np.concatenate([n1, ones], axis=2)
    q = np.concatenate([n2, ones], axis=2)
    A = (q[:, :, :, None] * p[:, :, None, :]).reshape(m, 7, 9)
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    wide = (s[:, 0] == 0) | (s[:, 6] <= NULLSPACE_GAP * s[:, 0])
    status = np.where(~(ok1 & ok2), "points", np.where(wide, "nullspace", "ok"))
    F1 = Vt[:, 7].reshape(m, 3, 3)
    F2 = Vt[:, 8].reshape(m, 3, 3)
    coeffs = _det_cubic(F1, F2)
    scale = np.abs(coeffs).max(axis=1)
    proper = np.abs(coeffs[:, 0]) > 1e-14 * scale
    cubic_roots = iter(_polished_cubic_roots(coeffs[proper])) if proper.any() else iter(())

    solutions: List[List[np.ndarray]] = []
    for i in range(m):
        roots = next(cubic_roots) if proper[i] else None
        if status[i] != "ok":
            solutions.append([])
            continue
        mats = []
        if roots is None:
            # root at infinity: F1 - F2 itself is singular
            mats.append(F1[i] - F2[i])
            roots = _real_roots(coeffs[i])
        mats.extend(lam * F1[i] + (1.0 - lam) * F2[i] for lam in roots)
        solutions.append([canonical(T2[i].T @ F @ T1[i]) for F in mats])
    return solutions, status


def seven_point(corrs: CorrSet) -> List[np.ndarray]:
    """All rank-2 matrices in the 2-dimensional null space of a 7-row design matrix.

    Solved in Hartley-normalized coordinates; returns 1 to 3 canonical
    solutions (may be empty if no real root survives the tolerance).
    """
    if len(corrs) != 7:
        raise WrongSampleSize(f"seven-point solver needs exactly 7 pairs, got {len(corrs)}")
    (solutions,), (status,) = _seven_point_batch(corrs.x1[None], corrs.x2[None])
    if status == "points":
        raise DegeneratePoints("points coincide; cannot normalize")
    if status == "nullspace":
        raise DegenerateConfiguration("design matrix null space has dimension > 2")
    return solutions


@dataclass(frozen=True)
class RobustConfig:
    """Settings for the hypothesize-and-verify estimators.

    ``inlier_threshold`` applies to the symmetric epipolar distance, which is
    a squared distance (px^2); the default of 2 mirrors the high-confidence
    selection rule.
    """

    max_iterations: int = 2000
    inlier_threshold: float = 2.0
    seed: int = 0
    min_inlier_count: int = 8
    confidence: Optional[float] = 0.99

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")
        if self.confidence is not None and not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")


def _sample_stream(seed: int, index: int) -> np.random.Generator:
    # one independent stream per hypothesis index keeps results order-independent
    return np.random.default_rng([int(seed), int(index)])


def _required_iterations(inlier_ratio: float, confidence: float, sample_size: int = 7) -> float:
    w = inlier_ratio ** sample_size
    if w >= 1.0:
        return 1.0
    if w <= 0.0:
        return math.inf
    return math.log(1.0 - confidence) / math.log(1.0 - w)


def _sample(n: int, seed: int, index: int) -> np.ndarray:
    return np.sort(_sample_stream(seed, index).choice(n, size=7, replace=False))


def _batch_distances(Fs: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Symmetric epipolar distances of every pair under each of ``k`` matrices, ``(k, n)``.

    Points where both line normals vanish score ``inf``.
    """
    l2 = np.einsum("kij,nj->kni", Fs, p)
    l1 = np.einsum("kji,nj->kni", Fs, q)
    r = np.einsum("kni,ni->kn", l2, q)
    n1 = l1[..., 0] ** 2 + l1[..., 1] ** 2
    n2 = l2[..., 0] ** 2 + l2[..., 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(n1 > 0, 1.0 / n1, 0.0) + np.where(n2 > 0, 1.0 / n2, 0.0)
        d = r * r * inv
    d[(n1 == 0) & (n2 == 0)] = np.inf
    return d


def _scored_hypotheses(corrs: CorrSet, seed: int, max_iterations: int, chunk: int = 32):
    """Yield ``(index, [(F, distances), ...])`` in index order.

    Hypotheses are generated and scored a chunk at a time; the consumer
    decides when to stop, so the result never depends on the chunk size.
    """
    p, q = corrs.p, corrs.q
    for base in range(0, max_iterations, chunk):
        indices = range(base, min(base + chunk, max_iterations))
        samples = np.array([_sample(len(corrs), seed, i) for i in indices])
        # degenerate samples simply contribute no hypotheses
        per_index, _ = _seven_point_batch(corrs.x1[samples], corrs.x2[samples])
        flat = [F for hyps in per_index for F in hyps]
        dists = _batch_distances(np.asarray(flat), p, q) if flat else np.empty((0, len(corrs)))
        k = 0
        for i, hyps in zip(indices, per_index):
            yield i, [(F, dists[k + j]) for j, F in enumerate(hyps)]
            k += len(hyps)


def _refit(corrs: CorrSet, mask: np.ndarray) -> Optional[np.ndarray]:
    if mask.sum() < 8:
        return None
    try:
        return normalized_eight_point(corrs.subset(np.flatnonzero(mask)))
    except DegenerateConfiguration:
        return None


@dataclass
class RansacResult:
    F: np.ndarray
    inliers: np.ndarray
    iterations: int

    def __iter__(self):
        return iter((self.F, self.inliers, self.iterations))


def ransac(corrs: CorrSet, cfg: RobustConfig = RobustConfig()) -> RansacResult:
    """Seven-point RANSAC scored by symmetric epipolar distance.

    The winning hypothesis has the most inliers, ties going to the lower
    summed distance over inliers.  With at least 8 inliers the model is refit
    by the normalized 8-point algorithm; the refit is kept unless it supports
    fewer inliers than the hypothesis.
    """
    n = len(corrs)
    if n < 7:
        raise InsufficientCorrespondences(f"RANSAC needs at least 7 correspondences, got {n}")
    best = None  # (count, score, F, mask)
    iterations = 0
    for i, scored in _scored_hypotheses(corrs, cfg.seed, cfg.max_iterations):
        for F, d in scored:
            mask = d < cfg.inlier_threshold
            count = int(mask.sum())
            score = float(d[mask].sum())
            if best is None or count > best[0] or (count == best[0] and score < best[1]):
                best = (count, score, F, mask)
        iterations = i + 1
        if best is not None and cfg.confidence is not None:
            if iterations >= _required_iterations(best[0] / n, cfg.confidence):
                break
    if best is None or best[0] < cfg.min_inlier_count:
        found = 0 if best is None else best[0]
        raise NoConsensus(f"best hypothesis has {found} inliers, need {cfg.min_inlier_count}")
    count, _, F, mask = best
    refit = _refit(corrs, mask)
    if refit is not None:
        refit_mask = _batch_distances(refit[None], corrs.p, corrs.q)[0] < cfg.inlier_threshold
        if refit_mask.sum() >= count:
            F, mask = refit, refit_mask
    return RansacResult(F, mask, iterations)


# 1.4826 makes the median absolute deviation consistent for Gaussian noise
_MAD_CONSISTENCY = 1.4826
_LMEDS_CUT = 2.5
# keeps the inlier cut positive on exact data where the median residual is ~0
_SCALE_FLOOR = 1e-9


@dataclass
class LemedsResult:
    F: np.ndarray
    inliers: np.ndarray
    median: float
    sigma: float
    iterations: int

    def __iter__(self):
        return iter((self.F, self.inliers))


def _robust_sigma(median: float, n: int) -> float:
    finite = 1.0 + 5.0 / max(n - 7, 1)
    return max(_MAD_CONSISTENCY * finite * math.sqrt(median), _SCALE_FLOOR)


def lemeds(corrs: CorrSet, cfg: RobustConfig = RobustConfig()) -> LemedsResult:
    """Least median of squared symmetric epipolar distances over 7-point hypotheses.

    Inliers are pairs within ``(2.5 sigma)^2`` where ``sigma`` is the robust
    scale estimate from the best median.  ``cfg.inlier_threshold`` is unused.
    """
    n = len(corrs)
    if n < 7:
        raise InsufficientCorrespondences(f"LeMedS needs at least 7 correspondences, got {n}")
    best = None  # (median, F, distances)
    iterations = 0
    for i, scored in _scored_hypotheses(corrs, cfg.seed, cfg.max_iterations):
        for F, d in scored:
            med = float(np.median(d))
            if best is None or med < best[0]:
                best = (med, F, d)
        iterations = i + 1
        # a poor hypothesis inflates its own scale estimate, so the sample
        # count assumes the 50% breakdown worst case instead of the observed ratio
        if cfg.confidence is not None and iterations >= _required_iterations(0.5, cfg.confidence):
            break
    if best is None:
        raise DegenerateConfiguration("no valid 7-point hypothesis found")
    med, F, d = best
    sigma = _robust_sigma(med, n)
    cut = (_LMEDS_CUT * sigma) ** 2
    mask = d <= cut
    refit = _refit(corrs, mask)
    if refit is not None:
        refit_d = _batch_distances(refit[None], corrs.p, corrs.q)[0]
        if np.median(refit_d) <= med:
            F, mask = refit, refit_d <= cut
    return LemedsResult(F, mask, med, sigma, iterations)


# -- algebraic minimization ----------------------------------------------------


def epipole_expansion(e) -> np.ndarray:
    """9x9 ``E`` with ``vec(M @ skew(e)) = E @ vec(M)`` (row-major ``vec``)."""
    return np.kron(np.eye(3), skew(e).T)


def _solve_given_epipole(A: np.ndarray, e: np.ndarray, ref: Optional[np.ndarray] = None):
    E = epipole_expansion(e)
    U, s, _ = np.linalg.svd(E)
    U = U[:, :6]  # range of E; rank 6 for a nonzero epipole
    _, _, Vt = np.linalg.svd(A @ U)
    f = U @ Vt[-1]
    if ref is not None and f @ ref < 0:
        f = -f
    return f, A @ f


@dataclass
class AlgMinResult:
    F: np.ndarray
    trace: List[float] = field(default_factory=list)
    iterations: int = 0
    iterates: List[np.ndarray] = field(default_factory=list, repr=False)

    def __iter__(self):
        return iter((self.F, self.trace))


def _unit_epipole(F: np.ndarray) -> np.ndarray:
    _, s, Vt = np.linalg.svd(F)
    if s[0] == 0 or s[2] > 1e-6 * s[0] or s[1] <= RANK_DEFICIENT_TOL * s[0]:
        raise RankDeficientInit(f"initial matrix must have rank 2, singular values {s}")
    return Vt[2]


def algebraic_minimization(
    corrs: CorrSet,
    f_init,
    max_iterations: int = 100,
    rtol: float = 1e-10,
) -> AlgMinResult:
    """Minimize ``||A vec(F)||`` over unit-norm ``F = M [e]x``.

    For a fixed epipole the problem is a constrained linear least-squares
    solved on an orthonormal basis of ``range(E)``.  The epipole starts at
    the null vector of ``f_init`` and is refined by damped Gauss-Newton steps
    on the residual vector; only steps that lower the objective are accepted,
    so ``trace`` is non-increasing.  ``trace[0]`` is the objective of the
    normalized initial matrix.
    """
    if len(corrs) < 8:
        raise InsufficientCorrespondences(f"need at least 8 correspondences, got {len(corrs)}")
    F0 = np.asarray(f_init, dtype=float)
    e = _unit_epipole(F0)
    A = design_matrix(corrs)
    f0 = F0.ravel() / np.linalg.norm(F0)
    trace = [float(np.linalg.norm(A @ f0))]

    f, r = _solve_given_epipole(A, e, f0)
    cost = float(np.linalg.norm(r))
    if cost > trace[0]:
        # the initial matrix already lies in range(E); keep it if it is better
        f, r, cost = f0, A @ f0, trace[0]
    trace.append(cost)
    iterates = [f.reshape(3, 3).copy()]
    damping = 1e-3
    iterations = 1
    while iterations < max_iterations:
        # residual Jacobian w.r.t. the epipole by central differences
        h = 1e-6
        J = np.empty((len(r), 3))
        for k in range(3):
            de = np.zeros(3)
            de[k] = h
            rp = _solve_given_epipole(A, e + de, f)[1]
            rm = _solve_given_epipole(A, e - de, f)[1]
            J[:, k] = (rp - rm) / (2 * h)
        JtJ = J.T @ J
        g = J.T @ r
        accepted = False
        for _ in range(30):
            step = np.linalg.solve(JtJ + damping * np.diag(np.diag(JtJ) + 1e-12), -g)
            e_new = e + step
            e_new /= np.linalg.norm(e_new)
            f_new, r_new = _solve_given_epipole(A, e_new, f)
            cost_new = float(np.linalg.norm(r_new))
            if cost_new < cost:
                accepted = True
                damping = max(damping / 10, 1e-12)
                break
            damping *= 10
        iterations += 1
        if not accepted:
            break
        decrease = (cost - cost_new) / max(cost, np.finfo(float).tiny)
        e, f, r, cost = e_new, f_new, r_new, cost_new
        trace.append(cost)
        iterates.append(f.reshape(3, 3).copy())
        if decrease < rtol:
            break
    return AlgMinResult(canonical(f.reshape(3, 3)), trace, len(trace) - 1, iterates)
