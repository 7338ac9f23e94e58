"""Differentiable fundamental-matrix heads.

Each layer is a pair of pure functions: ``*_forward`` evaluates the layer,
``*_backward`` maps an upstream gradient ``dL/dF`` (a ``(3, 3)`` array) back
to the layer inputs.  Jacobians are closed-form product-rule expressions.
"""

from __future__ import annotations

import enum
from typing import Optional, Tuple

import numpy as np

from .errors import DependentColumns, MixedNormalization, NearZeroDivisor, ZeroMatrix
from .geometry import (
    CameraIntrinsics,
    RelativePose,
    _axis_rotation_derivatives,
    _axis_rotations,
    compose_fundamental,
    intrinsics_inverse,
    skew,
)

ETR_EPS = 1e-9
# Columns f1, f2 count as independent when sigma_min / sigma_max exceeds this.
COLUMN_INDEPENDENCE_TOL = 1e-8

RECON_NAMES = ("f1", "f2", "tx", "ty", "tz", "rx", "ry", "rz")
EPI_NAMES = ("f1_1", "f1_2", "f1_3", "f2_1", "f2_2", "f2_3", "alpha", "beta")


class NormKind(str, enum.Enum):
    ETR = "ETR"
    FBN = "FBN"
    ABS = "ABS"

    @classmethod
    def parse(cls, value) -> "NormKind":
        if isinstance(value, cls):
            return value
        return cls(str(value).upper())


# -- reconstruction layer ----------------------------------------------------


def _principals(principal1, principal2):
    principal1 = (0.0, 0.0) if principal1 is None else principal1
    principal2 = principal1 if principal2 is None else principal2
    return tuple(map(float, principal1)), tuple(map(float, principal2))


def recon_to_camera(theta, principal1=None, principal2=None):
    """Split an 8-vector ``(f1, f2, tx, ty, tz, rx, ry, rz)`` into camera objects."""
    theta = np.asarray(theta, dtype=float).reshape(8)
    (c1x, c1y), (c2x, c2y) = _principals(principal1, principal2)
    k1 = CameraIntrinsics(theta[0], c1x, c1y)
    k2 = CameraIntrinsics(theta[1], c2x, c2y)
    pose = RelativePose(tuple(theta[2:5]), tuple(theta[5:8]))
    return k1, k2, pose


def reconstruct_forward(theta, principal1=None, principal2=None) -> np.ndarray:
    """F from eight camera parameters; rank two by construction.

    ``principal2`` defaults to ``principal1``, which defaults to the origin.
    """
    return compose_fundamental(*recon_to_camera(theta, principal1, principal2))


def reconstruct_jacobian(theta, principal1=None, principal2=None) -> np.ndarray:
    """``d vec(F) / d theta`` as a ``(9, 8)`` array, row-major ``vec``."""
    k1, k2, pose = recon_to_camera(theta, principal1, principal2)
    # forward also validates focal lengths and translation
    compose_fundamental(k1, k2, pose)
    theta = np.asarray(theta, dtype=float).reshape(8)

    A = intrinsics_inverse(k2).T
    B = intrinsics_inverse(k1)
    S = skew(theta[2:5])
    Rx, Ry, Rz = _axis_rotations(*theta[5:8])
    dRx, dRy, dRz = _axis_rotation_derivatives(*theta[5:8])
    R = Rx @ Ry @ Rz

    def dKinv(k: CameraIntrinsics):
        g2 = 1.0 / (k.gamma * k.gamma)
        return np.array([[-g2, 0.0, k.cx * g2], [0.0, -g2, k.cy * g2], [0.0, 0.0, 0.0]])

    SR = S @ R
    ASR = A @ SR
    partials = [
        ASR @ dKinv(k1),
        dKinv(k2).T @ SR @ B,
        A @ skew((1.0, 0.0, 0.0)) @ R @ B,
        A @ skew((0.0, 1.0, 0.0)) @ R @ B,
        A @ skew((0.0, 0.0, 1.0)) @ R @ B,
        A @ S @ (dRx @ Ry @ Rz) @ B,
        A @ S @ (Rx @ dRy @ Rz) @ B,
        A @ S @ (Rx @ Ry @ dRz) @ B,
    ]
    return np.stack([d.ravel() for d in partials], axis=1)


def reconstruct_backward(theta, upstream, principal1=None, principal2=None) -> np.ndarray:
    J = reconstruct_jacobian(theta, principal1, principal2)
    return J.T @ np.asarray(upstream, dtype=float).reshape(9)


# -- epipolar parametrization ------------------------------------------------


def _check_columns(f1: np.ndarray, f2: np.ndarray) -> None:
    s = np.linalg.svd(np.column_stack([f1, f2]), compute_uv=False)
    if s[0] == 0 or s[1] <= COLUMN_INDEPENDENCE_TOL * s[0]:
        raise DependentColumns("first two columns are linearly dependent")


def epi_split(v):
    v = np.asarray(v, dtype=float).reshape(8)
    return v[0:3], v[3:6], v[6], v[7]


def epi_forward(v) -> np.ndarray:
    """``F = [f1 | f2 | alpha f1 + beta f2]``; ``F @ (alpha, beta, -1) = 0``."""
    f1, f2, alpha, beta = epi_split(v)
    _check_columns(f1, f2)
    return np.column_stack([f1, f2, alpha * f1 + beta * f2])


def epi_jacobian(v) -> np.ndarray:
    f1, f2, alpha, beta = epi_split(v)
    _check_columns(f1, f2)
    J = np.zeros((3, 3, 8))
    for i in range(3):
        J[i, 0, i] = 1.0
        J[i, 1, 3 + i] = 1.0
        J[i, 2, i] = alpha
        J[i, 2, 3 + i] = beta
        J[i, 2, 6] = f1[i]
        J[i, 2, 7] = f2[i]
    return J.reshape(9, 8)


def epi_backward(v, upstream) -> np.ndarray:
    f1, f2, alpha, beta = epi_split(v)
    _check_columns(f1, f2)
    G = np.asarray(upstream, dtype=float).reshape(3, 3)
    return np.concatenate(
        [
            G[:, 0] + alpha * G[:, 2],
            G[:, 1] + beta * G[:, 2],
            [G[:, 2] @ f1, G[:, 2] @ f2],
        ]
    )


def epi_from_matrix(F) -> np.ndarray:
    """Epipolar parameters of a rank-2 matrix whose first two columns are independent.

    ``alpha`` and ``beta`` are the least-squares coefficients of the third
    column on the first two.
    """
    F = np.asarray(F, dtype=float)
    f1, f2 = F[:, 0], F[:, 1]
    _check_columns(f1, f2)
    coef, *_ = np.linalg.lstsq(F[:, :2], F[:, 2], rcond=None)
    return np.concatenate([f1, f2, coef])


# -- normalization layers ----------------------------------------------------


def _abs_argmax(F: np.ndarray) -> int:
    # first maximizer in row-major order
    return int(np.argmax(np.abs(F).ravel()))


def _divisor(F: np.ndarray, kind: NormKind) -> float:
    if kind is NormKind.ETR:
        c = F[2, 2]
        if not abs(c) > ETR_EPS:
            raise NearZeroDivisor(f"|F33| = {abs(c):.3g} <= {ETR_EPS:g}")
        return float(c)
    if kind is NormKind.FBN:
        c = np.linalg.norm(F)
    else:
        c = np.abs(F.flat[_abs_argmax(F)])
    if c == 0:
        raise ZeroMatrix(f"{kind.value} normalization of a zero matrix")
    return float(c)


def normalize(F, kind) -> np.ndarray:
    """Fix the free scale of ``F``.

    ETR divides by ``F[2, 2]``, FBN by the Frobenius norm, ABS by the largest
    absolute entry.
    """
    kind = NormKind.parse(kind)
    F = np.asarray(F, dtype=float)
    return F / _divisor(F, kind)


def normalize_backward(F, kind, upstream) -> np.ndarray:
    """Quotient-rule gradient of ``normalize`` given ``dL/dN``.

    For ABS the derivative of the divisor goes to the first maximizing entry
    in row-major order, a valid subgradient at ties.
    """
    kind = NormKind.parse(kind)
    F = np.asarray(F, dtype=float)
    G = np.asarray(upstream, dtype=float).reshape(3, 3)
    c = _divisor(F, kind)
    if kind is NormKind.FBN:
        N = F / c
        return (G - np.sum(G * N) * N) / c
    grad = G / c
    # d c / d F is a single signed unit entry for ETR and ABS
    k = 8 if kind is NormKind.ETR else _abs_argmax(F)
    dc = 1.0 if kind is NormKind.ETR else float(np.sign(F.flat[k]))
    grad.flat[k] -= np.sum(G * F) / (c * c) * dc
    return grad


# -- training losses ---------------------------------------------------------


def loss(
    pred,
    target,
    weights: Tuple[float, float] = (1.0, 1.0),
    pred_kind: Optional[NormKind] = None,
    target_kind: Optional[NormKind] = None,
) -> Tuple[float, np.ndarray]:
    """Weighted L1 + L2 loss between normalized matrices and its gradient w.r.t. ``pred``.

    ``sign(0)`` is taken as 0.  Passing both ``pred_kind`` and ``target_kind``
    lets the caller guard against comparing matrices normalized differently.
    """
    if pred_kind is not None and target_kind is not None:
        if NormKind.parse(pred_kind) is not NormKind.parse(target_kind):
            raise MixedNormalization(f"{pred_kind} vs {target_kind}")
    w1, w2 = weights
    d = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    value = w1 * np.sum(np.abs(d)) + w2 * np.sum(d * d)
    grad = w1 * np.sign(d) + 2.0 * w2 * d
    return float(value), grad
