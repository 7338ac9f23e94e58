"""Differentiable fundamental-matrix layers, classic estimators and a synthetic benchmark."""

from .errors import *  # noqa: F401,F403
from .estimators import (
    RobustConfig,
    algebraic_minimization,
    design_matrix,
    eight_point,
    hartley_normalize,
    lemeds,
    normalized_eight_point,
    ransac,
    seven_point,
)
from .fitting import FitConfig, FitTrace, Objective, Parametrization, fit, multi_start_fit
from .geometry import (
    CameraIntrinsics,
    CorrSet,
    RelativePose,
    canonical,
    compose_fundamental,
    epipolar_residual,
    intrinsics_matrix,
    right_epipole,
    rotation_from_euler,
    skew,
)
from .layers import (
    NormKind,
    epi_backward,
    epi_forward,
    loss,
    normalize,
    normalize_backward,
    reconstruct_backward,
    reconstruct_forward,
)
from .metrics import (
    MetricReport,
    epi_abs,
    epi_sqr,
    fmat_distance,
    select_high_confidence,
    symmetric_epipolar_distance,
)
from .synthetic import SceneConfig, SyntheticScene, generate_scene, project

__version__ = "0.1.0"
