"""Command-line entry point: generate, estimate, fit, gradcheck, benchmark."""

from __future__ import annotations

import argparse
import json
import secrets
import sys
from pathlib import Path
from typing import List, Optional

from . import io as fio
from .benchmark import BenchmarkSpec, run_benchmark
from .errors import ConfigError, FmatError, GradientCheckFailed
from .estimators import (
    RobustConfig,
    algebraic_minimization,
    eight_point,
    lemeds,
    normalized_eight_point,
    ransac,
)
from .fitting import FitConfig, Objective, Parametrization, fit, multi_start_fit
from .gradcheck import CHECKS, run_gradcheck
from .layers import NormKind, epi_from_matrix, normalize
from .metrics import metric_report
from .synthetic import generate_scene

EXIT_OK = 0
EXIT_USAGE = 2

ESTIMATORS = ("eight-point", "norm-eight-point", "ransac", "lemeds", "alg-min")
NORM_CHOICES = [k.value for k in NormKind]


def _resolve_seed(args, fallback: Optional[int] = None) -> int:
    """Explicit ``--seed`` wins, then a file-supplied seed, else draw one and announce it."""
    if args.seed is not None:
        return args.seed
    if fallback is not None:
        return fallback
    seed = secrets.randbits(63)
    print(f"# seed = {seed}", file=sys.stderr)
    return seed


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# -- subcommands ---------------------------------------------------------------


def cmd_generate(args) -> int:
    text = Path(args.config).read_text()
    data = fio.parse_json_object(text, str(args.config))
    cfg = fio.parse_scene_config(text)
    cfg = cfg.replace(seed=_resolve_seed(args, cfg.seed if "seed" in data else None))
    scene = generate_scene(cfg)
    out = Path(args.output or ".")
    out.mkdir(parents=True, exist_ok=True)
    fio.write_corrs(out / "corrs.csv", scene.corrs_noisy)
    fio.write_calibration(out / "calibration.txt", *scene.projection_matrices())
    fio.write_fmat(out / "f_gt.txt", scene.f_gt)
    print(f"wrote {out / 'corrs.csv'}, {out / 'calibration.txt'}, {out / 'f_gt.txt'}")
    return EXIT_OK


def _report(F, corrs, norm: NormKind, fmt: str) -> str:
    rep = metric_report(normalize(F, norm), corrs)
    if fmt == "csv":
        rec = rep.as_record()
        return ",".join(rec) + "\n" + ",".join(
            str(v) if isinstance(v, int) else format(v, ".17g") for v in rec.values()
        ) + "\n"
    return f"norm = {norm.value}\n" + rep.to_text()


def cmd_estimate(args) -> int:
    corrs = fio.read_corrs(args.corrs)
    norm = NormKind.parse(args.norm)
    if args.method == "eight-point":
        F = eight_point(corrs)
    elif args.method == "norm-eight-point":
        F = normalized_eight_point(corrs)
    elif args.method == "alg-min":
        F = algebraic_minimization(corrs, normalized_eight_point(corrs)).F
    else:
        cfg = RobustConfig(
            max_iterations=args.max_iterations,
            inlier_threshold=args.threshold,
            seed=_resolve_seed(args),
        )
        F = (ransac if args.method == "ransac" else lemeds)(corrs, cfg).F
    if args.output:
        fio.write_fmat(args.output, F)
    else:
        sys.stdout.write(fio.format_fmat(F))
    sys.stdout.write(_report(F, corrs, norm, args.format))
    return EXIT_OK


def cmd_fit(args) -> int:
    param = Parametrization(args.parametrization.upper())
    objective = Objective.SUPERVISED_L1L2 if args.target else Objective.EPI_SQR_LOSS
    cfg = FitConfig(
        parametrization=param,
        norm=NormKind.parse(args.norm),
        objective=objective,
        step_size=args.step_size,
        max_steps=args.max_steps,
        principal1=tuple(args.principal),
        seed=_resolve_seed(args),
    )
    corrs = fio.read_corrs(args.corrs) if args.corrs else None
    if objective is Objective.SUPERVISED_L1L2:
        data = fio.read_fmat(args.target)
    elif corrs is None:
        raise ConfigError("fit needs a correspondence file or --target")
    else:
        data = corrs
    if param is Parametrization.EPI and args.starts == 1:
        if corrs is None:
            raise ConfigError("EPI initialization needs correspondences")
        trace = fit(epi_from_matrix(eight_point(corrs)), cfg, data)
    else:
        trace = multi_start_fit(cfg, data, args.starts, cfg.seed)
    _emit(trace.to_text(), args.output)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.trials < 1:
        print("error: --trials must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    report = run_gradcheck(args.layer, args.trials, _resolve_seed(args), ties=args.ties)
    _emit(report.to_text(), args.output)
    if not report.passed:
        raise GradientCheckFailed(
            f"{report.failures} of {report.trials} trials exceed relative error {report.tolerance:g}"
        )
    return EXIT_OK


def cmd_benchmark(args) -> int:
    data = fio.parse_json_object(Path(args.spec).read_text(), str(args.spec))
    if args.seed is not None or "seed" not in data:
        data["seed"] = _resolve_seed(args)
    if args.trials is not None:
        data["trials"] = args.trials
    try:
        spec = BenchmarkSpec.from_dict(data)
    except TypeError as exc:
        raise ConfigError(f"benchmark spec: {exc}") from None
    table = run_benchmark(spec, threads=args.threads)
    csv_text = table.to_csv()
    if args.output:
        Path(args.output).write_text(csv_text)
    sys.stdout.write(csv_text if args.format == "csv" else table.to_text())
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # subcommand copies use SUPPRESS so a flag given before the subcommand survives
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=_u64, default=d(None), help="64-bit RNG seed")
    parser.add_argument("--output", default=d(None), help="output path")
    parser.add_argument("--format", choices=("text", "csv"), default=d("text"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fmatlayers", description=__doc__)
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic scene")
    p.add_argument("config", help="scene config (JSON)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("estimate", parents=[common], help="classic F estimation")
    p.add_argument("corrs", help="correspondence CSV")
    p.add_argument("--method", choices=ESTIMATORS, required=True)
    p.add_argument("--norm", choices=NORM_CHOICES, type=str.upper, required=True,
                   help="normalization applied before the metric report")
    p.add_argument("--threshold", type=float, default=2.0, help="inlier threshold (px^2)")
    p.add_argument("--max-iterations", type=int, default=2000)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("fit", parents=[common], help="gradient fit through the layers")
    p.add_argument("corrs", nargs="?", help="correspondence CSV")
    p.add_argument("--parametrization", choices=("recon", "epi"), type=str.lower, default="recon")
    p.add_argument("--norm", choices=NORM_CHOICES, type=str.upper, default="FBN")
    p.add_argument("--target", help="F file; switches to the supervised L1+L2 objective")
    p.add_argument("--starts", type=int, default=8, help="random starts (recon)")
    p.add_argument("--max-steps", type=int, default=2000)
    p.add_argument("--step-size", type=float, default=1e-2)
    p.add_argument("--principal", type=float, nargs=2, default=(0.0, 0.0), metavar=("CX", "CY"))
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--layer", choices=tuple(CHECKS), required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--ties", action="store_true",
                   help="construct tie/kink points (norm-abs, loss)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("benchmark", parents=[common], help="methods x normalizations table")
    p.add_argument("spec", help="benchmark spec (JSON)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--trials", type=int, default=None, help="override the spec's trial count")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FmatError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
