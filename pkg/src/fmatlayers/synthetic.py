"""Synthetic two-camera scenes with exact ground truth.

The first camera sits at the origin looking down +z; the second is related
by ``X2 = R @ X1 + t``.  Ground truth F comes from the camera parameters and
can be cross-checked against the projection-matrix derivation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Tuple

import numpy as np

from .errors import (
    BehindCamera,
    CoincidentCenters,
    ConfigError,
    InfeasibleConfig,
    RankDeficientCamera,
)
from .geometry import (
    CameraIntrinsics,
    CorrSet,
    RelativePose,
    compose_fundamental,
    intrinsics_matrix,
    rotation_from_euler,
    skew,
)


@dataclass(frozen=True)
class SceneConfig:
    n_points: int = 60
    depth_range: Tuple[float, float] = (4.0, 20.0)
    image_size: Tuple[int, int] = (640, 480)
    gamma: float = 500.0
    # per-axis bounds: |t_i| <= t_range[i] before unit-normalizing t, |r_i| <= r_range[i]
    t_range: Tuple[float, float, float] = (1.0, 0.3, 0.5)
    r_range: Tuple[float, float, float] = (0.1, 0.1, 0.1)
    noise_sigma: float = 0.0
    outlier_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("depth_range", "image_size", "t_range", "r_range"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        zmin, zmax = self.depth_range
        if not self.n_points >= 1:
            raise ConfigError("n_points: must be at least 1")
        if not 0 < zmin < zmax:
            raise ConfigError(f"depth_range: need 0 < zmin < zmax, got {self.depth_range}")
        if len(self.image_size) != 2 or min(self.image_size) <= 0:
            raise ConfigError(f"image_size: need two positive sizes, got {self.image_size}")
        if not self.gamma > 0:
            raise ConfigError(f"gamma: must be positive, got {self.gamma}")
        if len(self.t_range) != 3 or len(self.r_range) != 3:
            raise ConfigError("t_range/r_range: need three bounds each")
        if min(self.t_range) < 0 or max(self.t_range) <= 0 or min(self.r_range) < 0:
            raise ConfigError("t_range/r_range: bounds must be nonnegative, t_range not all zero")
        if not self.noise_sigma >= 0:
            raise ConfigError(f"noise_sigma: must be nonnegative, got {self.noise_sigma}")
        if not 0 <= self.outlier_fraction < 1:
            raise ConfigError(f"outlier_fraction: must lie in [0, 1), got {self.outlier_fraction}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed: must be an unsigned 64-bit integer")

    @property
    def principal_point(self) -> Tuple[float, float]:
        w, h = self.image_size
        return (w / 2.0, h / 2.0)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "SceneConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> "SceneConfig":
        return SceneConfig(**{**asdict(self), **changes})


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    config: SceneConfig
    points3d: np.ndarray
    cam1: Tuple[CameraIntrinsics, RelativePose]
    cam2: Tuple[CameraIntrinsics, RelativePose]
    corrs_exact: CorrSet
    corrs_noisy: CorrSet
    f_gt: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def recon_params(self) -> np.ndarray:
        """Generating 8-vector ``(f1, f2, tx, ty, tz, rx, ry, rz)``."""
        k1, _ = self.cam1
        k2, pose = self.cam2
        return np.array([k1.gamma, k2.gamma, *pose.t, *pose.r], dtype=float)

    def projection_matrices(self) -> Tuple[np.ndarray, np.ndarray]:
        return camera_matrices(self.cam1[0], self.cam2[0], self.cam2[1])


def camera_matrices(k1: CameraIntrinsics, k2: CameraIntrinsics, pose: RelativePose):
    """``P1 = K1 [I | 0]`` and ``P2 = K2 [R | t]``."""
    P1 = intrinsics_matrix(k1) @ np.hstack([np.eye(3), np.zeros((3, 1))])
    R = rotation_from_euler(*pose.r)
    t = np.asarray(pose.t, dtype=float).reshape(3, 1)
    P2 = intrinsics_matrix(k2) @ np.hstack([R, t])
    return P1, P2


def project(point3d, intrinsics: CameraIntrinsics, pose: RelativePose = None) -> np.ndarray:
    """Pinhole projection to homogeneous pixel coordinates with ``w = 1``."""
    X = np.asarray(point3d, dtype=float).reshape(3)
    if pose is not None:
        X = rotation_from_euler(*pose.r) @ X + np.asarray(pose.t, dtype=float)
    if not X[2] > 0:
        raise BehindCamera(f"point has depth {X[2]:.6g}")
    x = intrinsics_matrix(intrinsics) @ X
    return np.array([x[0] / x[2], x[1] / x[2], 1.0])


def _project_many(X: np.ndarray, K: np.ndarray, R: np.ndarray, t: np.ndarray):
    Xc = X @ R.T + t
    x = Xc @ K.T
    return x[:, :2] / x[:, 2:3], Xc[:, 2]


def perturb(
    corrs: CorrSet,
    noise_sigma: float,
    outlier_fraction: float,
    image_size,
    seed,
) -> CorrSet:
    """Gaussian noise on both points of inlier pairs, uniform resampling of outliers.

    Exactly ``floor(outlier_fraction * n)`` pairs become outliers: their
    second point is redrawn uniformly over the image.  Labels mark inliers.
    """
    if not 0 <= outlier_fraction < 1:
        raise ConfigError(f"outlier_fraction: must lie in [0, 1), got {outlier_fraction}")
    rng = np.random.default_rng(seed)
    n = len(corrs)
    n_out = int(math.floor(outlier_fraction * n))
    x1 = corrs.x1.copy()
    x2 = corrs.x2.copy()
    if noise_sigma > 0:
        x1 += rng.normal(0.0, noise_sigma, size=x1.shape)
        x2 += rng.normal(0.0, noise_sigma, size=x2.shape)
    labels = np.ones(n, dtype=bool)
    if n_out:
        idx = np.sort(rng.choice(n, size=n_out, replace=False))
        w, h = image_size
        x1[idx] = corrs.x1[idx]
        x2[idx] = rng.uniform((0.0, 0.0), (w, h), size=(n_out, 2))
        labels[idx] = False
    return CorrSet(x1, x2, labels)


def generate_scene(cfg: SceneConfig) -> SyntheticScene:
    """Random co-visible scene, deterministic in ``cfg.seed``."""
    geo_seed, noise_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    rng = np.random.default_rng(geo_seed)
    w, h = cfg.image_size
    cx, cy = cfg.principal_point
    k = CameraIntrinsics(float(cfg.gamma), cx, cy)

    t_bound = np.asarray(cfg.t_range, dtype=float)
    while True:
        t = rng.uniform(-t_bound, t_bound)
        if np.linalg.norm(t) > 1e-3 * np.linalg.norm(t_bound):
            break
    t = t / np.linalg.norm(t)
    r = rng.uniform(-np.asarray(cfg.r_range), np.asarray(cfg.r_range))
    pose = RelativePose(tuple(float(c) for c in t), tuple(float(c) for c in r))

    K = intrinsics_matrix(k)
    R = rotation_from_euler(*r)
    zmin, zmax = cfg.depth_range
    points = []
    attempts = 0
    budget = 100 * cfg.n_points
    while len(points) < cfg.n_points and attempts < budget:
        batch = min(budget - attempts, max(cfg.n_points, 64))
        attempts += batch
        pix = rng.uniform((0.0, 0.0), (w, h), size=(batch, 2))
        z = rng.uniform(zmin, zmax, size=batch)
        X = np.column_stack([(pix[:, 0] - cx) / k.gamma * z, (pix[:, 1] - cy) / k.gamma * z, z])
        x2, depth2 = _project_many(X, K, R, t)
        ok = (depth2 > 0) & (x2[:, 0] >= 0) & (x2[:, 0] <= w) & (x2[:, 1] >= 0) & (x2[:, 1] <= h)
        points.extend(X[ok][: cfg.n_points - len(points)])
    if len(points) < cfg.n_points:
        raise InfeasibleConfig(
            f"only {len(points)} of {cfg.n_points} points co-visible after {budget} attempts"
        )
    X = np.asarray(points)
    x1, _ = _project_many(X, K, np.eye(3), np.zeros(3))
    x2, _ = _project_many(X, K, R, t)
    exact = CorrSet(x1, x2)
    noisy = perturb(exact, cfg.noise_sigma, cfg.outlier_fraction, cfg.image_size, noise_seed)
    f_gt = compose_fundamental(k, k, pose)
    return SyntheticScene(
        config=cfg,
        points3d=X,
        cam1=(k, RelativePose((0.0, 0.0, 0.0))),
        cam2=(k, pose),
        corrs_exact=exact,
        corrs_noisy=noisy,
        f_gt=f_gt,
        metadata={"translation_normalized": True, "attempts": attempts},
    )


def fundamental_from_projections(P1, P2) -> np.ndarray:
    """``F = [e']x P2 P1^+`` with ``e' = P2 C1`` and ``C1`` the centre of ``P1``."""
    P1 = np.asarray(P1, dtype=float).reshape(3, 4)
    P2 = np.asarray(P2, dtype=float).reshape(3, 4)
    for name, P in (("P1", P1), ("P2", P2)):
        s = np.linalg.svd(P, compute_uv=False)
        if s[0] == 0 or s[2] <= 1e-12 * s[0]:
            raise RankDeficientCamera(f"{name} does not have rank 3")
    C1 = np.linalg.svd(P1)[2][-1]
    C2 = np.linalg.svd(P2)[2][-1]
    # centres coincide when they are parallel as homogeneous 4-vectors
    if np.linalg.norm(np.outer(C1, C2) - np.outer(C2, C1)) <= 1e-12:
        raise CoincidentCenters("camera centres coincide")
    e2 = P2 @ C1
    return skew(e2) @ P2 @ np.linalg.pinv(P1)
