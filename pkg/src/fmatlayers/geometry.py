"""Two-view geometry primitives.

Fundamental matrices are plain ``(3, 3)`` float arrays.  Correspondences are
held in :class:`CorrSet`, pixel coordinates ``(n, 2)`` per image.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateTranslation,
    FullRank,
    NonPositiveFocal,
    RankDeficient,
    ZeroMatrix,
)

# Smallest/largest singular value ratio at or below which a matrix counts as rank <= 2.
RANK2_TOL = 1e-9
# second singular value this far below the first counts as zero
RANK_DEFICIENT_TOL = 1e-12


@dataclass(frozen=True)
class CameraIntrinsics:
    """Diagonal scalar ``gamma`` and principal point of a pinhole camera."""

    gamma: float
    cx: float = 0.0
    cy: float = 0.0


@dataclass(frozen=True)
class RelativePose:
    """Second camera relative to the first: ``X2 = R(r) @ X1 + t``."""

    t: tuple
    r: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True, eq=False)
class CorrSet:
    """Paired pixel correspondences ``x1[i] <-> x2[i]``.

    ``labels`` is an optional boolean inlier flag per pair.
    """

    x1: np.ndarray
    x2: np.ndarray
    labels: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        x1 = np.asarray(self.x1, dtype=float).reshape(-1, 2)
        x2 = np.asarray(self.x2, dtype=float).reshape(-1, 2)
        if len(x1) == 0:
            raise ValueError("correspondence set is empty")
        if x1.shape != x2.shape:
            raise ValueError(f"mismatched point lists: {x1.shape} vs {x2.shape}")
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "x2", x2)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=bool).reshape(-1)
            if len(labels) != len(x1):
                raise ValueError("label count does not match correspondence count")
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.x1)

    @property
    def p(self) -> np.ndarray:
        """Homogeneous points in image 1, shape ``(n, 3)`` with ``w = 1``."""
        return to_homogeneous(self.x1)

    @property
    def q(self) -> np.ndarray:
        """Homogeneous points in image 2, shape ``(n, 3)`` with ``w = 1``."""
        return to_homogeneous(self.x2)

    def subset(self, index) -> "CorrSet":
        labels = None if self.labels is None else self.labels[index]
        return CorrSet(self.x1[index], self.x2[index], labels)

    def equals(self, other: "CorrSet") -> bool:
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None
            and other.labels is not None
            and np.array_equal(self.labels, other.labels)
        )
        return (
            np.array_equal(self.x1, other.x1)
            and np.array_equal(self.x2, other.x2)
            and same_labels
        )


def to_homogeneous(xy) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    return np.concatenate([xy, np.ones(xy.shape[:-1] + (1,))], axis=-1)


def homo_point(x: float, y: float) -> np.ndarray:
    return np.array([x, y, 1.0])


def skew(t) -> np.ndarray:
    """Cross-product matrix: ``skew(t) @ v == np.cross(t, v)``."""
    tx, ty, tz = (float(c) for c in t)
    return np.array(
        [
            [0.0, -tz, ty],
            [tz, 0.0, -tx],
            [-ty, tx, 0.0],
        ]
    )


def _axis_rotations(rx: float, ry: float, rz: float):
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    Ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    Rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    return Rx, Ry, Rz


def _axis_rotation_derivatives(rx: float, ry: float, rz: float):
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    dRx = np.array([[0.0, 0.0, 0.0], [0.0, -sx, -cx], [0.0, cx, -sx]])
    dRy = np.array([[-sy, 0.0, cy], [0.0, 0.0, 0.0], [-cy, 0.0, -sy]])
    dRz = np.array([[-sz, -cz, 0.0], [cz, -sz, 0.0], [0.0, 0.0, 0.0]])
    return dRx, dRy, dRz


def rotation_from_euler(rx: float, ry: float, rz: float) -> np.ndarray:
    """Right-handed rotation ``Rx(rx) @ Ry(ry) @ Rz(rz)``, angles in radians."""
    Rx, Ry, Rz = _axis_rotations(rx, ry, rz)
    return Rx @ Ry @ Rz


def intrinsics_matrix(k: CameraIntrinsics) -> np.ndarray:
    if not k.gamma > 0:
        raise NonPositiveFocal(f"gamma must be positive, got {k.gamma}")
    return np.array(
        [
            [k.gamma, 0.0, k.cx],
            [0.0, k.gamma, k.cy],
            [0.0, 0.0, 1.0],
        ]
    )


def intrinsics_inverse(k: CameraIntrinsics) -> np.ndarray:
    """Closed-form inverse of the upper-triangular intrinsics matrix."""
    if not k.gamma > 0:
        raise NonPositiveFocal(f"gamma must be positive, got {k.gamma}")
    g = 1.0 / k.gamma
    return np.array(
        [
            [g, 0.0, -k.cx * g],
            [0.0, g, -k.cy * g],
            [0.0, 0.0, 1.0],
        ]
    )


def compose_fundamental(
    k1: CameraIntrinsics, k2: CameraIntrinsics, pose: RelativePose
) -> np.ndarray:
    """``F = K2^-T [t]x R K1^-1``."""
    t = np.asarray(pose.t, dtype=float)
    if np.linalg.norm(t) < 1e-12:
        raise DegenerateTranslation("translation norm below 1e-12")
    K1inv = intrinsics_inverse(k1)
    K2invT = intrinsics_inverse(k2).T
    R = rotation_from_euler(*pose.r)
    return K2invT @ skew(t) @ R @ K1inv


def epipolar_residual(F, p, q) -> float:
    """The scalar ``q^T F p`` for homogeneous 3-vectors ``p`` and ``q``."""
    return float(np.asarray(q, dtype=float) @ np.asarray(F, dtype=float) @ np.asarray(p, dtype=float))


def epipolar_residuals(F, corrs: CorrSet) -> np.ndarray:
    """Vector of ``q_i^T F p_i`` over a correspondence set."""
    return np.einsum("ni,ij,nj->n", corrs.q, np.asarray(F, dtype=float), corrs.p)


def singular_ratio(F) -> float:
    """Smallest over largest singular value (0 for the zero matrix)."""
    s = np.linalg.svd(np.asarray(F, dtype=float), compute_uv=False)
    return 0.0 if s[0] == 0 else float(s[-1] / s[0])


def is_rank2(F, tol: float = RANK2_TOL) -> bool:
    return singular_ratio(F) <= tol


def right_epipole(F) -> np.ndarray:
    """Unit-norm generator of the right null space of a rank-2 matrix."""
    _, s, Vt = np.linalg.svd(np.asarray(F, dtype=float))
    if s[0] == 0 or s[2] > 1e-6 * s[0]:
        raise FullRank(f"singular values {s} do not indicate a null space")
    if s[1] <= RANK_DEFICIENT_TOL * s[0]:
        raise RankDeficient("null space is more than one-dimensional")
    return Vt[2]


def left_epipole(F) -> np.ndarray:
    return right_epipole(np.asarray(F, dtype=float).T)


def canonical(F) -> np.ndarray:
    """Unit Frobenius norm, sign chosen so the largest-magnitude entry is positive."""
    F = np.asarray(F, dtype=float)
    norm = np.linalg.norm(F)
    if norm == 0 or not np.isfinite(norm):
        raise ZeroMatrix("cannot canonicalize a zero or non-finite matrix")
    G = F / norm
    k = np.argmax(np.abs(G).ravel())
    if G.flat[k] < 0:
        G = -G
    return G


def enforce_rank2(F) -> np.ndarray:
    """Nearest singular matrix in Frobenius norm."""
    U, s, Vt = np.linalg.svd(np.asarray(F, dtype=float))
    s[2] = 0.0
    return (U * s) @ Vt


def as_matrix(rows: Sequence[Sequence[float]]) -> np.ndarray:
    F = np.asarray(rows, dtype=float).reshape(3, 3)
    if not np.all(np.isfinite(F)):
        raise ValueError("fundamental matrix entries must be finite")
    return F
