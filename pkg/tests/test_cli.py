import json
import subprocess
import sys

import numpy as np
import pytest

from fmatlayers import io as fio
from fmatlayers.cli import main
from fmatlayers.metrics import fmat_distance


@pytest.fixture
def scene_dir(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_points": 60, "seed": 5}))
    out = tmp_path / "scene"
    assert main(["generate", str(cfg), "--output", str(out)]) == 0
    return out


def test_generate_writes_roundtrippable_files(scene_dir, tmp_path):
    corrs = fio.read_corrs(scene_dir / "corrs.csv")
    F = fio.read_fmat(scene_dir / "f_gt.txt")
    P1, P2 = fio.read_calibration(scene_dir / "calibration.txt")
    # second write of the parsed values must give the same bytes
    again = tmp_path / "again.csv"
    fio.write_corrs(again, corrs)
    assert again.read_bytes() == (scene_dir / "corrs.csv").read_bytes()
    assert fio.format_fmat(F) == (scene_dir / "f_gt.txt").read_text()
    assert fio.format_calibration(P1, P2) == (scene_dir / "calibration.txt").read_text()


def test_generate_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n_points": 10, "sparkle": true}')
    assert main(["generate", str(bad), "--seed", "1"]) == 2
    assert "sparkle" in capsys.readouterr().err
    bad.write_text('{"depth_range": [0, 4]}')
    assert main(["generate", str(bad), "--seed", "1"]) == 2
    bad.write_text('{"depth_range": [0.01, 0.02], "t_range": [1, 0, 0], "gamma": 5000}')
    assert main(["generate", str(bad), "--seed", "1", "--output", str(tmp_path / "o")]) == 3


def test_estimate_eight_point_matches_truth(scene_dir, tmp_path, capsys):
    out = tmp_path / "F.txt"
    rc = main(["estimate", str(scene_dir / "corrs.csv"), "--method", "eight-point",
               "--norm", "FBN", "--output", str(out)])
    assert rc == 0
    assert fmat_distance(fio.read_fmat(out), fio.read_fmat(scene_dir / "f_gt.txt")) < 1e-6
    assert "epi_abs = " in capsys.readouterr().out


def test_estimate_ransac_bytewise_deterministic(scene_dir, tmp_path):
    paths = [tmp_path / "a.txt", tmp_path / "b.txt"]
    for p in paths:
        assert main(["--seed", "7", "estimate", str(scene_dir / "corrs.csv"), "--method", "ransac",
                     "--norm", "ETR", "--output", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_estimate_guards(scene_dir, tmp_path):
    lines = (scene_dir / "corrs.csv").read_text().splitlines()
    short = tmp_path / "five.csv"
    short.write_text("\n".join(lines[:6]) + "\n")
    assert main(["estimate", str(short), "--method", "eight-point", "--norm", "FBN"]) == 4
    same = tmp_path / "same.csv"
    same.write_text("x1,y1,x2,y2\n" + "1,2,3,4\n" * 9)
    assert main(["estimate", str(same), "--method", "eight-point", "--norm", "FBN"]) == 5


def test_omitted_seed_is_drawn_and_printed(scene_dir, capsys):
    assert main(["estimate", str(scene_dir / "corrs.csv"), "--method", "lemeds", "--norm", "FBN",
                 "--format", "csv"]) == 0
    cap = capsys.readouterr()
    assert "# seed = " in cap.err
    assert cap.out.splitlines()[3].startswith("epi_abs,epi_sqr")


def test_gradcheck_exit_codes(capsys):
    assert main(["gradcheck", "--layer", "recon", "--trials", "100", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "status = PASS" in out and "worst_point = " in out
    assert main(["gradcheck", "--layer", "norm-abs", "--trials", "3", "--ties", "--seed", "1"]) == 0
    assert "excluded_tie = 3" in capsys.readouterr().out
    assert main(["gradcheck", "--layer", "loss", "--trials", "0"]) == 2


def test_gradcheck_failure_exit_6(monkeypatch):
    import fmatlayers.layers as layers

    real = layers.reconstruct_backward
    monkeypatch.setattr("fmatlayers.gradcheck.reconstruct_backward",
                        lambda th, G, pp=None: 1.01 * real(th, G, pp))
    assert main(["gradcheck", "--layer", "recon", "--trials", "2", "--seed", "0"]) == 6


def test_fit_command(scene_dir, tmp_path):
    out = tmp_path / "trace.txt"
    rc = main(["--seed", "2", "fit", str(scene_dir / "corrs.csv"), "--parametrization", "epi",
               "--starts", "1", "--max-steps", "20", "--output", str(out)])
    assert rc == 0
    text = out.read_text()
    assert "step,objective" in text and "# F" in text
    rc = main(["--seed", "2", "fit", "--target", str(scene_dir / "f_gt.txt"), "--starts", "2",
               "--max-steps", "20", "--principal", "320", "240", "--output", str(out)])
    assert rc == 0


def test_benchmark_command(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"methods": ["EIGHT_POINT", "RANSAC"], "norms": ["FBN"], "trials": 1,
                                "scene": {"noise_sigma": 0.5}}))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["benchmark", str(spec), "--seed", "4", "--output", str(a)]) == 0
    assert "GROUND_TRUTH" in capsys.readouterr().out
    assert main(["benchmark", str(spec), "--seed", "4", "--output", str(b), "--threads", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    spec.write_text(json.dumps({"methods": [], "norms": ["FBN"]}))
    assert main(["benchmark", str(spec), "--seed", "4"]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fmatlayers", "gradcheck", "--layer", "epi",
                           "--trials", "5", "--seed", "3"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "status = PASS" in proc.stdout
