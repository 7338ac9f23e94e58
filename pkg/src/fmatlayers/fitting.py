"""Gradient-descent fitting of F through the differentiable layers.

Parameters are either the eight reconstruction parameters or the eight
epipolar-parametrization values; the objective is either the squared
epipolar residual on correspondences or an L1/L2 loss against a target F.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from .errors import AllStartsFailed, DependentColumns, FmatError
from .geometry import CorrSet
from .layers import (
    NormKind,
    epi_backward,
    epi_forward,
    epi_jacobian,
    loss,
    normalize,
    normalize_backward,
    reconstruct_backward,
    reconstruct_forward,
    reconstruct_jacobian,
)


class Parametrization(str, enum.Enum):
    RECON = "RECON"
    EPI = "EPI"


class Objective(str, enum.Enum):
    EPI_SQR_LOSS = "EPI_SQR_LOSS"
    SUPERVISED_L1L2 = "SUPERVISED_L1L2"


@dataclass(frozen=True)
class FitConfig:
    parametrization: Parametrization = Parametrization.RECON
    norm: Optional[NormKind] = NormKind.FBN
    objective: Objective = Objective.EPI_SQR_LOSS
    step_size: float = 1e-2
    max_steps: int = 2000
    grad_tolerance: float = 1e-10
    seed: int = 0
    loss_weights: Tuple[float, float] = (1.0, 1.0)
    principal1: Tuple[float, float] = (0.0, 0.0)
    principal2: Optional[Tuple[float, float]] = None
    max_halvings: int = 30
    # search-direction metric: "none", "diagonal" (fixed at the start point) or "gauss-newton"
    precondition: str = "gauss-newton"
    step_growth: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "parametrization", Parametrization(self.parametrization))
        object.__setattr__(self, "objective", Objective(self.objective))
        if self.norm is not None:
            object.__setattr__(self, "norm", NormKind.parse(self.norm))
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.precondition not in ("none", "diagonal", "gauss-newton"):
            raise ValueError(f"unknown preconditioner {self.precondition!r}")


@dataclass
class FitTrace:
    objective: List[float]
    params: np.ndarray
    F: np.ndarray
    converged: bool
    steps: int
    line_search_failed: bool = False
    start_index: int = 0

    @property
    def final_objective(self) -> float:
        return self.objective[-1]

    def to_text(self) -> str:
        """Per-step objective CSV followed by the final F block."""
        from .io import format_fmat

        out = io.StringIO()
        out.write(f"# converged={self.converged} steps={self.steps} "
                  f"line_search_failed={self.line_search_failed}\n")
        out.write("# params=" + " ".join(format(v, ".17g") for v in self.params) + "\n")
        out.write("step,objective\n")
        for k, v in enumerate(self.objective):
            out.write(f"{k},{v:.17g}\n")
        out.write("# F\n")
        out.write(format_fmat(self.F))
        return out.getvalue()


def forward(params, cfg: FitConfig) -> np.ndarray:
    if cfg.parametrization is Parametrization.RECON:
        return reconstruct_forward(params, cfg.principal1, cfg.principal2)
    return epi_forward(params)


def _backward(params, cfg: FitConfig, upstream) -> np.ndarray:
    if cfg.parametrization is Parametrization.RECON:
        return reconstruct_backward(params, upstream, cfg.principal1, cfg.principal2)
    return epi_backward(params, upstream)


Data = Union[CorrSet, np.ndarray]


def objective_and_gradient(params, cfg: FitConfig, data: Data) -> Tuple[float, np.ndarray]:
    """Scalar objective and its gradient w.r.t. the 8 parameters.

    ``data`` is a :class:`CorrSet` for ``EPI_SQR_LOSS`` or a target matrix
    for ``SUPERVISED_L1L2``.  When ``cfg.norm`` is set the predicted matrix
    (and the target) pass through that normalization first.
    """
    params = np.asarray(params, dtype=float)
    F = forward(params, cfg)
    N = normalize(F, cfg.norm) if cfg.norm is not None else F
    if cfg.objective is Objective.EPI_SQR_LOSS:
        p, q = data.p, data.q
        r = np.einsum("ni,ij,nj->n", q, N, p)
        value = float(r @ r)
        dN = 2.0 * np.einsum("n,ni,nj->ij", r, q, p)
    else:
        target = np.asarray(data, dtype=float)
        if cfg.norm is not None:
            target = normalize(target, cfg.norm)
        value, dN = loss(N, target, cfg.loss_weights)
    dF = normalize_backward(F, cfg.norm, dN) if cfg.norm is not None else dN
    return value, _backward(params, cfg, dF)


def _jacobian(params, cfg: FitConfig) -> np.ndarray:
    if cfg.parametrization is Parametrization.RECON:
        return reconstruct_jacobian(params, cfg.principal1, cfg.principal2)
    return epi_jacobian(params)


def residual_jacobian(params, cfg: FitConfig, data: Data) -> np.ndarray:
    """Jacobian of the residual vector behind the objective.

    The residuals are the epipolar residuals for ``EPI_SQR_LOSS`` and the
    entries of the normalized matrix otherwise.
    """
    params = np.asarray(params, dtype=float)
    J = _jacobian(params, cfg)
    if cfg.norm is not None:
        F = forward(params, cfg)
        basis = np.eye(9).reshape(9, 3, 3)
        # rows of dN/dF: backward pass of each unit upstream
        dNdF = np.stack([normalize_backward(F, cfg.norm, b).ravel() for b in basis])
        J = dNdF @ J
    if cfg.objective is Objective.EPI_SQR_LOSS:
        A = (data.q[:, :, None] * data.p[:, None, :]).reshape(len(data), 9)
        J = A @ J
    return J


def preconditioner(params, cfg: FitConfig, data: Data) -> np.ndarray:
    """Symmetric positive-definite ``P``; descent moves ``params`` along ``-P @ grad``.

    ``diagonal`` inverts the diagonal of ``J^T J``; ``gauss-newton`` inverts
    ``J^T J`` itself after symmetric diagonal scaling, damped by ``1e-9`` so
    the flat translation-scale direction stays bounded.
    """
    n = len(np.asarray(params).reshape(-1))
    if cfg.precondition == "none":
        return np.eye(n)
    J = residual_jacobian(params, cfg, data)
    H = J.T @ J
    d = np.diag(H).copy()
    d[d <= 0] = 1.0
    if cfg.precondition == "diagonal":
        return np.diag(1.0 / d)
    # scale symmetrically before inverting to keep the solve well conditioned
    s = 1.0 / np.sqrt(d)
    Hs = H * np.outer(s, s) + 1e-9 * np.eye(n)
    return np.outer(s, s) * np.linalg.inv(Hs)


def fit(init, cfg: FitConfig, data: Data) -> FitTrace:
    """Gradient descent with backtracking.

    Each iteration tries the current step, halving up to ``cfg.max_halvings``
    times until the objective strictly decreases; an accepted step lets the
    next trial step double.  Stops on ``grad_tolerance``, ``max_steps`` or a
    failed line search (reported in the trace).  Layer errors propagate.

    Trial points are ``params - step * P @ grad`` with ``P`` from
    :func:`preconditioner`: the identity, a diagonal fixed at ``init``, or
    (default) the Gauss-Newton metric re-evaluated at every accepted point.
    ``grad_tolerance`` applies to ``sqrt(grad^T P grad)``.
    """
    x = np.asarray(init, dtype=float).copy()
    value, grad = objective_and_gradient(x, cfg, data)
    P = preconditioner(x, cfg, data)
    per_step = cfg.precondition == "gauss-newton"

    def u_norm(g):
        return float(np.sqrt(max(g @ P @ g, 0.0)))

    history = [value]
    step = cfg.step_size
    converged = False
    failed = False
    steps = 0
    while steps < cfg.max_steps:
        if u_norm(grad) <= cfg.grad_tolerance:
            converged = True
            break
        direction = P @ grad
        accepted = False
        for _ in range(cfg.max_halvings + 1):
            candidate = x - step * direction
            try:
                cand_value, cand_grad = objective_and_gradient(candidate, cfg, data)
            except DependentColumns:
                raise
            except FmatError:
                # stepped outside the layer's domain (e.g. zero translation)
                cand_value = np.inf
            if cand_value < value:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            failed = True
            break
        x, value, grad = candidate, cand_value, cand_grad
        if per_step:
            P = preconditioner(x, cfg, data)
        history.append(value)
        steps += 1
        step *= cfg.step_growth
    else:
        converged = u_norm(grad) <= cfg.grad_tolerance
    return FitTrace(
        objective=history,
        params=x,
        F=forward(x, cfg),
        converged=converged,
        steps=steps,
        line_search_failed=failed,
    )


def recon_init_sampler(
    focal_range: Tuple[float, float] = (300.0, 1000.0),
    angle_bound: float = 0.2,
) -> Callable[[np.random.Generator, FitConfig, Data], np.ndarray]:
    """Random reconstruction parameters: focal lengths in a range, unit translation, small angles."""

    def sample(rng: np.random.Generator, cfg: FitConfig, data: Data) -> np.ndarray:
        f = rng.uniform(*focal_range)
        t = rng.normal(size=3)
        t /= np.linalg.norm(t)
        r = rng.uniform(-angle_bound, angle_bound, size=3)
        return np.concatenate([[f, f], t, r])

    return sample


def epi_init_sampler(scale: float = 0.05):
    """Eight-point solution on the data, jittered by relative Gaussian noise."""
    from .estimators import normalized_eight_point
    from .layers import epi_from_matrix

    def sample(rng: np.random.Generator, cfg: FitConfig, data: Data) -> np.ndarray:
        if isinstance(data, CorrSet):
            F = normalized_eight_point(data)
        else:
            F = np.asarray(data, dtype=float)
        v = epi_from_matrix(F)
        return v * (1.0 + scale * rng.normal(size=8))

    return sample


def multi_start_fit(
    cfg: FitConfig,
    data: Data,
    n_starts: int,
    seed: int,
    init_sampler=None,
    max_workers: int = 1,
) -> FitTrace:
    """Best of ``n_starts`` fits from seeded initializations.

    Start ``i`` draws its initialization from ``default_rng([seed, i])``; the
    lowest final objective wins, ties going to the lower start index.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    if init_sampler is None:
        init_sampler = (
            recon_init_sampler()
            if cfg.parametrization is Parametrization.RECON
            else epi_init_sampler()
        )

    def run(i: int):
        rng = np.random.default_rng([int(seed), i])
        try:
            trace = fit(init_sampler(rng, cfg, data), cfg, data)
        except FmatError as exc:
            return exc
        trace.start_index = i
        return trace

    if max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers) as pool:
            results = list(pool.map(run, range(n_starts)))
    else:
        results = [run(i) for i in range(n_starts)]
    traces = [r for r in results if isinstance(r, FitTrace)]
    if not traces:
        raise AllStartsFailed(f"all {n_starts} starts failed; first error: {results[0]}")
    return min(traces, key=lambda t: (t.final_objective, t.start_index))


def perturbed_recon(params, rng: np.random.Generator, angle: float = 0.05, rel_t: float = 0.05):
    """Angles shifted uniformly within +-``angle``; translation components scaled within +-``rel_t``."""
    params = np.asarray(params, dtype=float).copy()
    params[5:8] += rng.uniform(-angle, angle, size=3)
    params[2:5] *= 1.0 + rng.uniform(-rel_t, rel_t, size=3)
    return params
