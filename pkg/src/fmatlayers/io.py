"""Text formats: F matrices, correspondence CSV, calibration files, scene configs."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from .errors import ConfigError
from .geometry import CorrSet
from .synthetic import SceneConfig

PathLike = Union[str, Path]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def format_fmat(F) -> str:
    """Three lines of three 17-digit floats, row-major."""
    F = np.asarray(F, dtype=float).reshape(3, 3)
    return "".join(" ".join(_fmt(v) for v in row) + "\n" for row in F)


def parse_fmat(text: str) -> np.ndarray:
    """Nine whitespace-separated floats, line breaks anywhere."""
    tokens = text.split()
    if len(tokens) != 9:
        raise ConfigError(f"F matrix needs 9 values, found {len(tokens)}")
    try:
        values = [float(t) for t in tokens]
    except ValueError as exc:
        raise ConfigError(f"F matrix: {exc}") from None
    F = np.array(values).reshape(3, 3)
    if not np.all(np.isfinite(F)):
        raise ConfigError("F matrix entries must be finite")
    return F


def write_fmat(path: PathLike, F) -> None:
    Path(path).write_text(format_fmat(F))


def read_fmat(path: PathLike) -> np.ndarray:
    return parse_fmat(Path(path).read_text())


# -- correspondences ---------------------------------------------------------

_CORR_HEADER = ["x1", "y1", "x2", "y2"]


def format_corrs(corrs: CorrSet) -> str:
    out = io.StringIO()
    labeled = corrs.labels is not None
    out.write(",".join(_CORR_HEADER + (["label"] if labeled else [])) + "\n")
    for i in range(len(corrs)):
        row = [*corrs.x1[i], *corrs.x2[i]]
        line = ",".join(_fmt(v) for v in row)
        if labeled:
            line += "," + ("1" if corrs.labels[i] else "0")
        out.write(line + "\n")
    return out.getvalue()


def parse_corrs(text: str) -> CorrSet:
    """Read ``x1,y1,x2,y2[,label]`` lines; the label column is optional."""
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise ConfigError("correspondence file is empty")
    header = [c.strip() for c in rows[0]]
    if header[:4] != _CORR_HEADER or header[4:] not in ([], ["label"]):
        raise ConfigError(f"line 1: expected header x1,y1,x2,y2[,label], got {','.join(header)}")
    labeled = len(header) == 5
    x1, x2, labels = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ConfigError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = [float(c) for c in row[:4]]
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
        x1.append(vals[:2])
        x2.append(vals[2:])
        if labeled:
            tok = row[4].strip().lower()
            if tok not in ("0", "1", "true", "false"):
                raise ConfigError(f"line {lineno}: label must be 0/1, got {row[4]!r}")
            labels.append(tok in ("1", "true"))
    if not x1:
        raise ConfigError("correspondence file has no data rows")
    return CorrSet(np.array(x1), np.array(x2), np.array(labels) if labeled else None)


def write_corrs(path: PathLike, corrs: CorrSet) -> None:
    Path(path).write_text(format_corrs(corrs))


def read_corrs(path: PathLike) -> CorrSet:
    return parse_corrs(Path(path).read_text())


# -- calibration -------------------------------------------------------------


def format_calibration(P1, P2) -> str:
    lines = []
    for name, P in (("P1", P1), ("P2", P2)):
        vals = np.asarray(P, dtype=float).reshape(12)
        lines.append(f"{name}: " + " ".join(_fmt(v) for v in vals))
    return "\n".join(lines) + "\n"


def parse_calibration(text: str) -> Tuple[np.ndarray, np.ndarray]:
    """Lines ``P1: <12 floats>`` and ``P2: <12 floats>``, row-major 3x4."""
    found = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, rest = line.partition(":")
        key = key.strip()
        if not sep or key not in ("P1", "P2"):
            # KITTI files carry extra matrices; only the two cameras matter here
            continue
        try:
            vals = [float(t) for t in rest.split()]
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
        if len(vals) != 12:
            raise ConfigError(f"line {lineno}: {key} needs 12 values, got {len(vals)}")
        found[key] = np.array(vals).reshape(3, 4)
    missing = [k for k in ("P1", "P2") if k not in found]
    if missing:
        raise ConfigError(f"calibration is missing {', '.join(missing)}")
    return found["P1"], found["P2"]


def write_calibration(path: PathLike, P1, P2) -> None:
    Path(path).write_text(format_calibration(P1, P2))


def read_calibration(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    return parse_calibration(Path(path).read_text())


# -- scene config ------------------------------------------------------------


def parse_json_object(text: str, what: str) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{what}: top level must be an object")
    return data


def parse_scene_config(text: str) -> SceneConfig:
    data = parse_json_object(text, "scene config")
    try:
        return SceneConfig.from_dict(data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scene config: {exc}") from None


def format_scene_config(cfg: SceneConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2) + "\n"


def read_scene_config(path: PathLike) -> SceneConfig:
    return parse_scene_config(Path(path).read_text())
