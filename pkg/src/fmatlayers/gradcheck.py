"""Analytic-vs-finite-difference gradient checks for every differentiable piece."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Tuple

import numpy as np

from .errors import ConfigError
from .fitting import FitConfig, Objective, Parametrization, objective_and_gradient
from .layers import (
    NormKind,
    _abs_argmax,
    epi_backward,
    epi_forward,
    loss,
    normalize,
    normalize_backward,
    reconstruct_backward,
    reconstruct_forward,
)

REL_TOL = 1e-5
# entries smaller than this fraction of the largest gradient entry are compared absolutely
FLOOR = 1e-3

LAYERS = ("recon", "epi", "norm-etr", "norm-fbn", "norm-abs", "loss")
OBJECTIVES = ("objective-recon-episqr", "objective-epi-episqr",
              "objective-recon-supervised", "objective-epi-supervised")


def relative_error(analytic, numeric) -> float:
    """Largest entrywise ``|a - n| / max(|a|, |n|, FLOOR * scale)``."""
    a = np.ravel(np.asarray(analytic, dtype=float))
    n = np.ravel(np.asarray(numeric, dtype=float))
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)))
    if scale == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), FLOOR * scale)
    return float(np.max(np.abs(a - n) / denom))


def _steps(x: np.ndarray) -> np.ndarray:
    return 1e-6 * (1.0 + np.abs(x))


def central_difference(f: Callable[[np.ndarray], float], x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    h = _steps(flat)
    g = np.empty_like(flat)
    for k in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[k] += h[k]
        xm[k] -= h[k]
        g[k] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * h[k])
    return g.reshape(x.shape)


def one_sided_derivative(f: Callable[[np.ndarray], float], x, direction, h: float = 1e-6) -> float:
    """Second-order forward difference of ``f`` along ``direction``."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(direction, dtype=float)
    f0, f1, f2 = f(x), f(x + h * d), f(x + 2.0 * h * d)
    return (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h)


@dataclass
class TrialOutcome:
    error: float
    point: np.ndarray
    tie: bool = False


@dataclass
class GradcheckReport:
    layer: str
    outcomes: List[TrialOutcome] = field(default_factory=list)
    tolerance: float = REL_TOL

    @property
    def trials(self) -> int:
        return len(self.outcomes)

    @property
    def failures(self) -> int:
        return sum(o.error >= self.tolerance for o in self.outcomes)

    @property
    def excluded_ties(self) -> int:
        return sum(o.tie for o in self.outcomes)

    @property
    def passed(self) -> bool:
        return self.failures == 0

    @property
    def worst(self) -> TrialOutcome:
        return max(self.outcomes, key=lambda o: o.error)

    def to_text(self) -> str:
        w = self.worst
        lines = [
            f"layer = {self.layer}",
            f"trials = {self.trials}",
            f"failures = {self.failures}",
            f"excluded_tie = {self.excluded_ties}",
            f"worst_relative_error = {w.error:.6e}",
            "worst_point = " + " ".join(format(v, ".17g") for v in np.ravel(w.point)),
            f"status = {'PASS' if self.passed else 'FAIL'}",
        ]
        return "\n".join(lines) + "\n"


# -- per-layer trials ----------------------------------------------------------


def _recon_point(rng) -> Tuple[np.ndarray, Tuple[float, float]]:
    theta = np.concatenate([
        rng.uniform(200.0, 1000.0, size=2),
        rng.normal(size=3),
        rng.uniform(-1.0, 1.0, size=3),
    ])
    principal = tuple(rng.uniform(0.0, 500.0, size=2))
    return theta, principal


def _check_recon(rng, tie: bool) -> TrialOutcome:
    theta, principal = _recon_point(rng)
    G = rng.normal(size=(3, 3))

    def f(x):
        return float(np.sum(G * reconstruct_forward(x, principal)))

    a = reconstruct_backward(theta, G, principal)
    return TrialOutcome(relative_error(a, central_difference(f, theta)), theta)


def _check_epi(rng, tie: bool) -> TrialOutcome:
    v = rng.normal(size=8)
    G = rng.normal(size=(3, 3))

    def f(x):
        return float(np.sum(G * epi_forward(x)))

    return TrialOutcome(relative_error(epi_backward(v, G), central_difference(f, v)), v)


def _abs_tie(F: np.ndarray, rtol: float = 1e-4) -> np.ndarray:
    """Indices whose magnitude is within ``rtol`` of the maximum."""
    mags = np.abs(F.ravel())
    return np.flatnonzero(mags >= mags.max() * (1.0 - rtol))


def _check_norm(kind: NormKind) -> Callable:
    def check(rng, tie: bool) -> TrialOutcome:
        F = rng.normal(size=(3, 3))
        if kind is NormKind.ETR:
            F[2, 2] = np.sign(F[2, 2]) * (0.5 + abs(F[2, 2]))
        if kind is NormKind.ABS and tie:
            # copy the largest magnitude onto another entry, random sign
            k = _abs_argmax(F)
            j = (k + 1 + rng.integers(8)) % 9
            F.flat[j] = rng.choice([-1.0, 1.0]) * abs(F.flat[k])
        G = rng.normal(size=(3, 3))

        def f(x):
            return float(np.sum(G * normalize(x, kind)))

        a = normalize_backward(F, kind, G)
        if kind is NormKind.ABS:
            tied = _abs_tie(F)
            if tied.size > 1:
                return TrialOutcome(_abs_subgradient_error(f, F, a, tied, rng), F.ravel(), tie=True)
        return TrialOutcome(relative_error(a, central_difference(f, F)), F.ravel())

    return check


def _abs_subgradient_error(f, F, analytic, tied, rng) -> float:
    """One-sided checks along directions that keep the attributed maximizer on top.

    The analytic gradient is the derivative of the smooth piece on which the
    first maximizer stays largest; directional derivatives into that piece
    must match it.
    """
    k = _abs_argmax(F)
    signs = np.sign(F.ravel())
    worst = 0.0
    for _ in range(4):
        D = rng.normal(size=9)
        push = max(signs[j] * D[j] for j in tied)
        D[k] = signs[k] * (abs(push) + 1.0)
        D = D.reshape(3, 3)
        numeric = one_sided_derivative(f, F, D)
        a = float(np.sum(analytic * D))
        worst = max(worst, relative_error([a], [numeric]))
    return worst


def _check_loss(rng, tie: bool) -> TrialOutcome:
    pred = rng.normal(size=(3, 3))
    target = rng.normal(size=(3, 3))
    weights = tuple(rng.uniform(0.1, 2.0, size=2))
    if tie:
        mask = rng.random(size=(3, 3)) < 0.4
        target[mask] = pred[mask]

    def f(x):
        return loss(x, target, weights)[0]

    _, a = loss(pred, target, weights)
    kinks = np.flatnonzero(np.abs((pred - target).ravel()) < 1e-4)
    point = np.concatenate([pred.ravel(), target.ravel(), weights])
    if kinks.size == 0:
        return TrialOutcome(relative_error(a, central_difference(f, pred)), point)
    # smooth entries: central differences; kinks: subgradient interval membership
    smooth = np.setdiff1d(np.arange(9), kinks)
    numeric = central_difference(f, pred).ravel()
    err = relative_error(a.ravel()[smooth], numeric[smooth]) if smooth.size else 0.0
    for k in kinks:
        e = np.zeros(9)
        e[k] = 1.0
        right = one_sided_derivative(f, pred, e.reshape(3, 3))
        left = -one_sided_derivative(f, pred, -e.reshape(3, 3))
        lo, hi = min(left, right), max(left, right)
        slack = REL_TOL * max(abs(lo), abs(hi), 1.0) * 0.1
        if not lo - slack <= a.flat[k] <= hi + slack:
            err = max(err, 1.0)
    return TrialOutcome(err, point, tie=True)


def _check_objective(parametrization: Parametrization, objective: Objective) -> Callable:
    from .synthetic import SceneConfig, generate_scene

    def check(rng, tie: bool) -> TrialOutcome:
        scene = generate_scene(SceneConfig(n_points=20, seed=int(rng.integers(2**32))))
        cfg = FitConfig(parametrization=parametrization, objective=objective,
                        norm=NormKind.FBN, principal1=scene.config.principal_point)
        data = scene.corrs_noisy if objective is Objective.EPI_SQR_LOSS else scene.f_gt
        if parametrization is Parametrization.RECON:
            x = scene.recon_params.copy()
            x[0:2] *= rng.uniform(0.8, 1.2, size=2)
            x[2:5] += 0.2 * rng.normal(size=3)
            x[5:8] += rng.uniform(-0.1, 0.1, size=3)
        else:
            # unit-scale point: the FD step is absolute near zero
            x = rng.normal(size=8)

        def f(z):
            return objective_and_gradient(z, cfg, data)[0]

        _, a = objective_and_gradient(x, cfg, data)
        return TrialOutcome(relative_error(a, central_difference(f, x)), x)

    return check


CHECKS = {
    "recon": _check_recon,
    "epi": _check_epi,
    "norm-etr": _check_norm(NormKind.ETR),
    "norm-fbn": _check_norm(NormKind.FBN),
    "norm-abs": _check_norm(NormKind.ABS),
    "loss": _check_loss,
    "objective-recon-episqr": _check_objective(Parametrization.RECON, Objective.EPI_SQR_LOSS),
    "objective-epi-episqr": _check_objective(Parametrization.EPI, Objective.EPI_SQR_LOSS),
    "objective-recon-supervised": _check_objective(Parametrization.RECON, Objective.SUPERVISED_L1L2),
    "objective-epi-supervised": _check_objective(Parametrization.EPI, Objective.SUPERVISED_L1L2),
}


def run_gradcheck(layer: str, trials: int, seed: int, ties: bool = False) -> GradcheckReport:
    """Check ``trials`` random points; ``ties`` builds kink points where a layer has them."""
    if layer not in CHECKS:
        raise ConfigError(f"unknown layer {layer!r}; choose from {', '.join(CHECKS)}")
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    check = CHECKS[layer]
    report = GradcheckReport(layer)
    for i in range(trials):
        rng = np.random.default_rng([int(seed), i])
        report.outcomes.append(check(rng, ties))
    return report
