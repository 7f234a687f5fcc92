import json
import math
import subprocess
import sys

import numpy as np
import pytest

from monoscale.cli import main
from monoscale.dataio import parse_pose_file
from monoscale.evaluation import read_series_csv, total_distance
from monoscale.records import positions_of


def kv(text):
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            out[k] = v
    return out


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    rc = main(["simulate", "--kind", "line-const-accel", "--duration", "10", "--lambda", "2.31", "--seed", "1", "--out", str(out)])
    assert rc == 0
    return out


def _inputs(sim, calib=True, gt=True):
    args = ["--imu", str(sim / "imu.csv"), "--poses", str(sim / "mono_tum.txt")]
    if calib:
        args += ["--calib", str(sim / "calib.txt")]
    if gt:
        args += ["--gt", str(sim / "groundtruth.csv")]
    return args


def test_simulate_hover_row_count(tmp_path, capsys):
    assert main(["simulate", "--kind", "hover", "--duration", "1", "--out", str(tmp_path)]) == 0
    rows = [l for l in (tmp_path / "imu.csv").read_text().splitlines() if not l.startswith("#")]
    assert len(rows) == 200
    assert kv(capsys.readouterr().out)["imu_samples"] == "200"
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "simulate" and manifest["seed"] == 0


def test_simulate_deterministic(tmp_path):
    common = ["simulate", "--kind", "dash", "--duration", "3", "--accel-noise", "0.05", "--mono-noise", "0.01", "--seed", "7"]
    assert main(common + ["--out", str(tmp_path / "a")]) == 0
    assert main(common + ["--out", str(tmp_path / "b")]) == 0
    for name in ("imu.csv", "mono_tum.txt", "groundtruth.csv", "calib.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_estimate_recovers_scale(sim, tmp_path, capsys):
    rc = main(["estimate", *_inputs(sim), "--vel-init", "gt", "--estimator", "all", "--out", str(tmp_path)])
    assert rc == 0
    summary = kv(capsys.readouterr().out)
    assert abs(float(summary["lambda_hat.ma-add"]) - 2.31) < 1e-6
    assert abs(float(summary["lambda_hat.ma-log"]) - 2.31) < 1e-6
    assert {f"lambda_hat.{n}" for n in ("ma-add", "ma-log", "ar", "kf")} <= summary.keys()
    assert summary == kv((tmp_path / "summary.txt").read_text())
    rows = read_series_csv(tmp_path / "lambda_series.csv")
    assert len(rows) == 199
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config"]["vel_init"] == "gt" and "numpy" in manifest["versions"]


def test_estimate_highrate(sim, tmp_path):
    rc = main(["estimate", *_inputs(sim), "--vel-init", "gt", "--highrate", "--out", str(tmp_path)])
    assert rc == 0
    poses = parse_pose_file(tmp_path / "highrate_tum.txt", "tum_txt")
    assert len(poses) > 1000


def test_estimate_missing_imu(sim, tmp_path):
    assert main(["estimate", "--poses", str(sim / "mono_tum.txt"), "--out", str(tmp_path)]) == 2
    assert main(["estimate", "--imu", str(tmp_path / "nope.csv"), "--poses", str(sim / "mono_tum.txt"), "--out", str(tmp_path)]) == 2


def test_estimate_bad_config(sim, tmp_path):
    assert main(["estimate", *_inputs(sim), "--kf-r", "0", "--out", str(tmp_path)]) == 3
    assert main(["estimate", *_inputs(sim), "--estimator", "median", "--out", str(tmp_path)]) == 3
    assert main(["estimate", *_inputs(sim), "--vel-init", "magic", "--out", str(tmp_path)]) == 3


def test_estimate_malformed_file(sim, tmp_path):
    bad = tmp_path / "imu.csv"
    bad.write_text("#h\n0,0,0,0,0,0\n")
    assert main(["estimate", "--imu", str(bad), "--poses", str(sim / "mono_tum.txt"), "--out", str(tmp_path)]) == 4


def test_estimate_no_valid_pairs(tmp_path):
    sim = tmp_path / "hover"
    assert main(["simulate", "--kind", "hover", "--duration", "2", "--out", str(sim)]) == 0
    assert main(["estimate", *_inputs(sim, gt=False), "--vel-init", "zero", "--out", str(tmp_path / "o")]) == 5


def test_estimate_unwritable(sim, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["estimate", *_inputs(sim), "--out", str(blocker / "sub")]) == 7


def test_evaluate(sim, tmp_path, capsys):
    rc = main(["evaluate", *_inputs(sim), "--vel-init", "gt", "--estimator", "ma-log,kf", "--out", str(tmp_path)])
    assert rc == 0
    rep = kv(capsys.readouterr().out)
    assert float(rep["lambda_g"]) == pytest.approx(2.31, rel=1e-12)
    assert float(rep["e_lambda.ma-log"]) < 1e-9
    assert float(rep["rmse.ma-log"]) < 1e-8
    assert rep == kv((tmp_path / "report.txt").read_text())
    rows = read_series_csv(tmp_path / "lambda_series.csv")
    assert rows[-1]["lambda_gt_running"] == pytest.approx(2.31, rel=1e-12)


def test_evaluate_noisy_fields_finite(tmp_path, capsys):
    sim = tmp_path / "noisy"
    assert main(["simulate", "--kind", "circle", "--duration", "10", "--lambda", "2.31", "--accel-noise", "0.05",
                 "--gyro-noise", "0.005", "--mono-noise", "0.005", "--calib-preset", "tilted", "--seed", "3",
                 "--out", str(sim)]) == 0
    capsys.readouterr()
    assert main(["evaluate", *_inputs(sim), "--estimator", "all", "--out", str(tmp_path / "o")]) == 0
    rep = kv(capsys.readouterr().out)
    for key in ("lambda_g", "total_distance_gt", "e_lambda.ma-log", "rmse.ma-log", "e_lambda.kf", "rmse.kf"):
        v = float(rep[key])
        assert math.isfinite(v) and v >= 0


def test_evaluate_requires_gt(sim, tmp_path):
    assert main(["evaluate", *_inputs(sim, gt=False), "--out", str(tmp_path)]) == 2


def test_evaluate_misaligned(sim, tmp_path):
    gt = tmp_path / "gt.csv"
    lines = (sim / "groundtruth.csv").read_text().splitlines()
    shifted = [lines[0]] + [str(int(l.split(",", 1)[0]) + 10**9) + "," + l.split(",", 1)[1] for l in lines[1:]]
    gt.write_text("\n".join(shifted) + "\n")
    args = ["--imu", str(sim / "imu.csv"), "--poses", str(sim / "mono_tum.txt"), "--gt", str(gt)]
    assert main(["evaluate", *args, "--vel-init", "zero", "--out", str(tmp_path / "o")]) == 6


def test_rescale_identity_and_double(sim, tmp_path):
    src = positions_of(parse_pose_file(sim / "mono_tum.txt", "tum_txt"))
    assert main(["rescale", "--poses", str(sim / "mono_tum.txt"), "--lambda", "1", "--out", str(tmp_path / "one")]) == 0
    one = positions_of(parse_pose_file(tmp_path / "one" / "rescaled_tum.txt", "tum_txt"))
    assert np.array_equal(one, src)
    assert main(["rescale", "--poses", str(sim / "mono_tum.txt"), "--lambda", "2", "--out", str(tmp_path / "two")]) == 0
    two = positions_of(parse_pose_file(tmp_path / "two" / "rescaled_tum.txt", "tum_txt"))
    assert total_distance(two) == pytest.approx(2 * total_distance(src), rel=1e-14)


def test_rescale_from_summary(sim, tmp_path):
    assert main(["estimate", *_inputs(sim), "--vel-init", "gt", "--out", str(tmp_path / "est")]) == 0
    rc = main(["rescale", "--poses", str(sim / "mono_tum.txt"), "--lambda", str(tmp_path / "est" / "summary.txt"),
               "--calib", str(sim / "calib.txt"), "--out", str(tmp_path / "r")])
    assert rc == 0
    out = positions_of(parse_pose_file(tmp_path / "r" / "rescaled_tum.txt", "tum_txt"))
    gt = parse_pose_file(sim / "groundtruth.csv", "euroc_gt_csv")
    gt_at_frames = positions_of(gt)[::10][: len(out)]
    assert np.allclose(out, gt_at_frames, atol=1e-5)


def test_rescale_rejects_nonpositive(sim, tmp_path):
    assert main(["rescale", "--poses", str(sim / "mono_tum.txt"), "--lambda", "0", "--out", str(tmp_path)]) == 3
    assert main(["rescale", "--poses", str(sim / "mono_tum.txt"), "--lambda", "-2", "--out", str(tmp_path)]) == 3


def test_stdout_only_summary(sim, tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "monoscale", "-v", "estimate", *_inputs(sim), "--vel-init", "gt", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert all(" = " in line for line in proc.stdout.splitlines())
    assert "INFO" in proc.stderr and "INFO" not in proc.stdout
