"""Table-style benchmark: methods x normalizations on seeded synthetic trials."""

from __future__ import annotations

import enum
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, FmatError
from .estimators import (
    RobustConfig,
    algebraic_minimization,
    eight_point,
    lemeds,
    normalized_eight_point,
    ransac,
)
from .fitting import (
    FitConfig,
    Objective,
    Parametrization,
    fit,
    multi_start_fit,
)
from .geometry import CorrSet, epipolar_residuals
from .layers import NormKind, epi_from_matrix, normalize
from .metrics import select_high_confidence
from .synthetic import SceneConfig, generate_scene


class Method(str, enum.Enum):
    EIGHT_POINT = "EIGHT_POINT"
    NORM_EIGHT_POINT = "NORM_EIGHT_POINT"
    RANSAC = "RANSAC"
    LEMEDS = "LEMEDS"
    ALG_MIN = "ALG_MIN"
    FIT_RECON = "FIT_RECON"
    FIT_EPI = "FIT_EPI"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ConfigError(f"unknown method {value!r}; choose from {names}") from None


GROUND_TRUTH = "GROUND_TRUTH"

# Wide, forward-moving stereo rig resembling a driving dataset.
KITTI_LIKE = SceneConfig(
    image_size=(1242, 375),
    gamma=718.0,
    depth_range=(5.0, 50.0),
    t_range=(0.1, 0.05, 1.0),
    r_range=(0.02, 0.1, 0.02),
)

SCENE_PRESETS: Dict[str, SceneConfig] = {"default": SceneConfig(), "kitti-like": KITTI_LIKE}


def trial_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for trial ``index``."""
    ss = np.random.SeedSequence([int(seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class BenchmarkSpec:
    methods: Tuple[Method, ...]
    norms: Tuple[NormKind, ...]
    scene: SceneConfig = field(default_factory=SceneConfig)
    trials: int = 10
    seed: int = 0
    robust: RobustConfig = field(default_factory=RobustConfig)
    fit_starts: int = 8
    fit_max_steps: int = 500
    threshold: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(Method.parse(m) for m in self.methods))
        try:
            norms = tuple(NormKind.parse(n) for n in self.norms)
        except ValueError as exc:
            raise ConfigError(f"norms: {exc}") from None
        object.__setattr__(self, "norms", norms)
        if not self.methods:
            raise ConfigError("methods: must not be empty")
        if not self.norms:
            raise ConfigError("norms: must not be empty")
        if not (isinstance(self.trials, int) and self.trials >= 1):
            raise ConfigError(f"trials: must be a positive integer, got {self.trials!r}")
        if self.fit_starts < 1 or self.fit_max_steps < 1:
            raise ConfigError("fit_starts/fit_max_steps: must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "BenchmarkSpec":
        known = {"methods", "norms", "scene", "preset", "trials", "seed", "robust",
                 "fit_starts", "fit_max_steps", "threshold"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown benchmark key(s): {', '.join(unknown)}")
        data = dict(data)
        preset = data.pop("preset", "default")
        if preset not in SCENE_PRESETS:
            raise ConfigError(f"preset: unknown scene preset {preset!r}")
        scene = SCENE_PRESETS[preset].replace(**data.pop("scene", {}))
        robust = data.pop("robust", {})
        try:
            robust = RobustConfig(**robust)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"robust: {exc}") from None
        for key in ("methods", "norms"):
            if key not in data:
                raise ConfigError(f"{key}: required")
        return cls(scene=scene, robust=robust, **data)


@dataclass
class TrialResult:
    """Per-(norm, method) residual sums and point counts for one trial."""

    index: int
    seed: int
    sums: Dict[Tuple[str, str], Tuple[float, float, int]]


def _estimate(method: Method, corrs: CorrSet, spec: BenchmarkSpec, seed: int,
              norm: NormKind, principal) -> np.ndarray:
    if method is Method.EIGHT_POINT:
        return eight_point(corrs)
    if method is Method.NORM_EIGHT_POINT:
        return normalized_eight_point(corrs)
    if method is Method.RANSAC:
        return ransac(corrs, _robust(spec, seed)).F
    if method is Method.LEMEDS:
        return lemeds(corrs, _robust(spec, seed)).F
    if method is Method.ALG_MIN:
        return algebraic_minimization(corrs, normalized_eight_point(corrs)).F
    cfg = FitConfig(
        parametrization=Parametrization.RECON if method is Method.FIT_RECON else Parametrization.EPI,
        norm=norm,
        objective=Objective.EPI_SQR_LOSS,
        max_steps=spec.fit_max_steps,
        seed=seed,
        principal1=principal,
    )
    if method is Method.FIT_RECON:
        return multi_start_fit(cfg, corrs, spec.fit_starts, seed).F
    return fit(epi_from_matrix(normalized_eight_point(corrs)), cfg, corrs).F


def _robust(spec: BenchmarkSpec, seed: int) -> RobustConfig:
    r = spec.robust
    return RobustConfig(r.max_iterations, r.inlier_threshold, seed, r.min_inlier_count, r.confidence)


def _norm_dependent(method: Method) -> bool:
    return method in (Method.FIT_RECON, Method.FIT_EPI)


def run_trial(spec: BenchmarkSpec, index: int) -> TrialResult:
    seed = trial_seed(spec.seed, index)
    scene = generate_scene(spec.scene.replace(seed=seed))
    corrs = scene.corrs_noisy
    principal = spec.scene.principal_point
    try:
        held_out = select_high_confidence(corrs, scene.f_gt, spec.threshold)
    except FmatError as exc:
        raise type(exc)(f"trial {index} (seed {seed}): {exc}") from exc

    cache: Dict[Method, np.ndarray] = {}
    sums = {}
    for norm in spec.norms:
        rows = [(m.value, m) for m in spec.methods] + [(GROUND_TRUTH, None)]
        for name, method in rows:
            try:
                if method is None:
                    F = scene.f_gt
                elif _norm_dependent(method):
                    F = _estimate(method, corrs, spec, seed, norm, principal)
                else:
                    if method not in cache:
                        cache[method] = _estimate(method, corrs, spec, seed, norm, principal)
                    F = cache[method]
                r = epipolar_residuals(normalize(F, norm), held_out)
            except FmatError as exc:
                raise type(exc)(
                    f"method {name}, norm {norm.value}, trial {index} (seed {seed}): {exc}"
                ) from exc
            sums[(norm.value, name)] = (float(np.sum(np.abs(r))), float(r @ r), len(held_out))
    return TrialResult(index, seed, sums)


@dataclass
class BenchmarkRow:
    norm: str
    method: str
    epi_abs: float
    epi_sqr: float
    epi_abs_mean: float
    epi_sqr_mean: float
    epi_abs_per_point: float
    epi_sqr_per_point: float
    trials: int


@dataclass
class BenchmarkTable:
    rows: List[BenchmarkRow]
    trials: List[TrialResult]

    def row(self, norm, method) -> BenchmarkRow:
        norm = NormKind.parse(norm).value
        method = method if method == GROUND_TRUTH else Method.parse(method).value
        for r in self.rows:
            if r.norm == norm and r.method == method:
                return r
        raise KeyError((norm, method))

    COLUMNS = ("norm", "method", "epi_abs", "epi_sqr", "epi_abs_mean", "epi_sqr_mean",
               "epi_abs_per_point", "epi_sqr_per_point", "trials")

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(",".join(self.COLUMNS) + "\n")
        for r in self.rows:
            vals = [getattr(r, c) for c in self.COLUMNS]
            out.write(",".join(
                v if isinstance(v, str) else str(v) if isinstance(v, int) else format(v, ".17g")
                for v in vals
            ) + "\n")
        return out.getvalue()

    def to_text(self) -> str:
        """Aligned table grouped by normalization; medians of per-trial sums."""
        header = ["norm", "method", "EPI-ABS", "EPI-SQR", "EPI-ABS/pt", "EPI-SQR/pt"]
        body = []
        last = None
        for r in self.rows:
            body.append([
                r.norm if r.norm != last else "",
                r.method,
                f"{r.epi_abs:.6g}",
                f"{r.epi_sqr:.6g}",
                f"{r.epi_abs_per_point:.6g}",
                f"{r.epi_sqr_per_point:.6g}",
            ])
            last = r.norm
        widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]

        def line(cells):
            return "  ".join(
                c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths))
            ).rstrip()

        rule = "-" * len(line(header))
        out = [line(header), rule]
        prev = None
        for r, cells in zip(self.rows, body):
            if prev is not None and r.norm != prev:
                out.append(rule)
            out.append(line(cells))
            prev = r.norm
        return "\n".join(out) + "\n"


def aggregate(spec: BenchmarkSpec, results: Sequence[TrialResult]) -> BenchmarkTable:
    rows = []
    for norm in spec.norms:
        for name in [m.value for m in spec.methods] + [GROUND_TRUTH]:
            vals = np.array([t.sums[(norm.value, name)] for t in results], dtype=float)
            abs_s, sqr_s, n = vals[:, 0], vals[:, 1], vals[:, 2]
            rows.append(BenchmarkRow(
                norm=norm.value,
                method=name,
                epi_abs=float(np.median(abs_s)),
                epi_sqr=float(np.median(sqr_s)),
                epi_abs_mean=float(np.mean(abs_s)),
                epi_sqr_mean=float(np.mean(sqr_s)),
                epi_abs_per_point=float(np.median(abs_s / n)),
                epi_sqr_per_point=float(np.median(sqr_s / n)),
                trials=len(results),
            ))
    return BenchmarkTable(rows, list(results))


def run_benchmark(spec: BenchmarkSpec, threads: int = 1) -> BenchmarkTable:
    """Run all trials; output order follows trial index whatever the thread count."""
    if threads < 1:
        raise ConfigError("threads: must be >= 1")
    indices = range(spec.trials)
    if threads == 1:
        results = [run_trial(spec, i) for i in indices]
    else:
        with ThreadPoolExecutor(threads) as pool:
            # map yields in submission order; the first raised error propagates
            results = list(pool.map(lambda i: run_trial(spec, i), indices))
    return aggregate(spec, results)
