"""Epipolar-constraint metrics and up-to-scale matrix comparison."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import DegenerateLine, EmptySelection
from .geometry import CorrSet, canonical, epipolar_residuals


@dataclass
class MetricReport:
    epi_abs: float
    epi_sqr: float
    n_points: int
    per_point: Optional[List[float]] = field(default=None, repr=False)

    @property
    def epi_abs_mean(self) -> float:
        return self.epi_abs / self.n_points

    @property
    def epi_sqr_mean(self) -> float:
        return self.epi_sqr / self.n_points

    def as_record(self) -> dict:
        return {
            "epi_abs": self.epi_abs,
            "epi_sqr": self.epi_sqr,
            "epi_abs_mean": self.epi_abs_mean,
            "epi_sqr_mean": self.epi_sqr_mean,
            "n_points": self.n_points,
        }

    def to_text(self) -> str:
        lines = []
        for key, value in self.as_record().items():
            text = str(value) if isinstance(value, int) else format(value, ".17g")
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"


def epi_abs(F, corrs: CorrSet) -> float:
    """Sum of absolute epipolar residuals ``|q_i^T F p_i|``."""
    return float(np.sum(np.abs(epipolar_residuals(F, corrs))))


def epi_sqr(F, corrs: CorrSet) -> float:
    """Sum of squared epipolar residuals."""
    r = epipolar_residuals(F, corrs)
    return float(r @ r)


def metric_report(F, corrs: CorrSet, keep_residuals: bool = False) -> MetricReport:
    r = epipolar_residuals(F, corrs)
    return MetricReport(
        epi_abs=float(np.sum(np.abs(r))),
        epi_sqr=float(r @ r),
        n_points=len(corrs),
        per_point=r.tolist() if keep_residuals else None,
    )


def symmetric_epipolar_distances(F, corrs: CorrSet) -> np.ndarray:
    """Squared point-to-epipolar-line distance, summed over both images (px^2).

    Invariant to nonzero rescaling of ``F``.  A side whose line normal
    vanishes (point at the epipole) contributes nothing; if both vanish the
    distance is undefined and :class:`DegenerateLine` is raised.
    """
    F = np.asarray(F, dtype=float)
    p, q = corrs.p, corrs.q
    l2 = p @ F.T  # F p, lines in image 2
    l1 = q @ F  # F^T q, lines in image 1
    r = np.sum(q * l2, axis=1)
    n2 = l2[:, 0] ** 2 + l2[:, 1] ** 2
    n1 = l1[:, 0] ** 2 + l1[:, 1] ** 2
    if np.any((n1 == 0) & (n2 == 0)):
        raise DegenerateLine("both epipolar line normals vanish")
    with np.errstate(divide="ignore"):
        inv = np.where(n1 > 0, 1.0 / np.where(n1 > 0, n1, 1.0), 0.0)
        inv += np.where(n2 > 0, 1.0 / np.where(n2 > 0, n2, 1.0), 0.0)
    return r * r * inv


def symmetric_epipolar_distance(F, p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    corrs = CorrSet(p[:2] / p[2], q[:2] / q[2])
    return float(symmetric_epipolar_distances(F, corrs)[0])


def high_confidence_mask(corrs: CorrSet, f_gt, threshold: float = 2.0) -> np.ndarray:
    return symmetric_epipolar_distances(f_gt, corrs) < threshold


def select_high_confidence(corrs: CorrSet, f_gt, threshold: float = 2.0) -> CorrSet:
    """Pairs whose symmetric epipolar distance under ``f_gt`` is below ``threshold``."""
    mask = high_confidence_mask(corrs, f_gt, threshold)
    if not mask.any():
        raise EmptySelection(f"no correspondence within {threshold} px^2 of its epipolar lines")
    return corrs.subset(np.flatnonzero(mask))


def fmat_distance(F1, F2) -> float:
    """Frobenius distance between canonicalized matrices; lies in ``[0, 2]``.

    Canonicalization fixes scale and a sign convention, so ``F`` and ``-F``
    map to the same point; both signs are compared to keep this a
    pseudo-metric on lines through the origin.
    """
    A = canonical(F1)
    B = canonical(F2)
    return float(min(np.linalg.norm(A - B), np.linalg.norm(A + B)))
