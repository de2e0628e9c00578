import json
import os

import pytest
import yaml

from humansim.cli import main
from humansim.config import MINIMAL_CONFIG

TEXT_OUTPUTS = (".csv", ".jsonl", ".yaml", ".txt", ".pgm")


def write_config(tmp_path, **edits):
    d = yaml.safe_load(MINIMAL_CONFIG)
    d["cameras"].append({"id": "cam1", "preset": "realsense_d435", "position": [2.6, -1.5, 1.2],
                         "look_at": [0, 0, 1.0]})
    d["calibration"] = {"radii": [2.0, 3.0], "trials": 2, "frames": 10, "camera_count": 3}
    d.update(edits)
    p = tmp_path / "scene.yaml"
    p.write_text(yaml.safe_dump(d))
    return str(p)


def outputs(out):
    """``{relative path: bytes}`` of every result file except the timestamped manifest."""
    got = {}
    for root, _, files in os.walk(out):
        for f in files:
            if f.endswith(TEXT_OUTPUTS):
                p = os.path.join(root, f)
                got[os.path.relpath(p, out)] = open(p, "rb").read()
    return got


def manifest(out):
    with open(os.path.join(out, "manifest.json")) as fh:
        return json.load(fh)


# -------------------------------------------------------------- exit codes


def test_usage_errors_exit_one(capsys):
    assert main(["explode"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main([]) == 1
    assert main(["info", "--seed", "-3"]) == 1
    assert main(["info", "--jobs", "0"]) == 1
    assert main(["info", "--bogus"]) == 1


def test_help_and_version_exit_zero(capsys):
    assert main(["--version"]) == 0
    assert "humansim" in capsys.readouterr().out
    assert main(["track", "--help"]) == 0


def test_invalid_config_exits_one(tmp_path, capsys):
    cfg = write_config(tmp_path, frame_rate=0)
    assert main(["info", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "frame_rate" in capsys.readouterr().err
    assert main(["info", "--config", str(tmp_path / "absent.yaml")]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("cameras: [")
    assert main(["info", "--config", str(bad)]) == 1


def test_teleop_needs_write_vico(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["teleop", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "actor.motion" in capsys.readouterr().err


def test_runtime_errors_exit_two(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["info", "--out", str(blocker / "sub")]) == 2
    # the wrist is never detected, so every teleop trial fails to acquire
    cfg = write_config(tmp_path, actor={"motion": "write_vico"}, detector={"p_miss": 1.0})
    out = tmp_path / "t"
    assert main(["teleop", "--config", cfg, "--out", str(out)]) == 2
    assert "FramingError" in (out / "teleop_summary.csv").read_text()


# ------------------------------------------------------------- happy paths


def test_info(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["info", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "cam0" in text and "kinect_v2" in text and "zed2" in text
    assert (out / "info.txt").read_text() == text
    m = manifest(out)
    assert m["subcommand"] == "info" and {o["path"] for o in m["outputs"]} == {"info.txt", "scene.yaml"}


def test_calibrate(tmp_path):
    out = tmp_path / "o"
    assert main(["calibrate", "--config", write_config(tmp_path), "--out", str(out)]) == 0
    lines = (out / "calibration.csv").read_text().splitlines()
    assert lines[0] == "radius_m,prop,trial,mean_trans_err_m,mean_rot_err_rad"
    assert len(lines) == 1 + 2 * 2
    assert len((out / "calibration_summary.csv").read_text().splitlines()) == 3
    assert {o["path"] for o in manifest(out)["outputs"]} == {"calibration.csv", "calibration_summary.csv",
                                                             "scene.yaml"}


def test_track(tmp_path):
    out = tmp_path / "o"
    assert main(["track", "--config", write_config(tmp_path, duration=0.3), "--out", str(out)]) == 0
    metrics = (out / "tracking_metrics.csv").read_text().splitlines()
    assert len(metrics) == 1 + 3 * 27  # two cameras plus the fused source
    assert len((out / "tracking_log.csv").read_text().splitlines()) == 1 + 9 * 3 * 27


def test_teleop(tmp_path):
    out = tmp_path / "o"
    cfg = write_config(tmp_path, actor={"motion": "write_vico"}, teleop={"trials": 2, "camera": "cam0"})
    assert main(["teleop", "--config", cfg, "--out", str(out)]) == 0
    summary = (out / "teleop_summary.csv").read_text().splitlines()
    assert summary[0] == "trial,path_rmse_m,success,dropouts,acquired_frame,status" and len(summary) == 3
    assert (out / "teleop_trace.csv").read_text().startswith("t_s,des_x")
    assert (out / "teleop_polyline.csv").exists()


def test_dataset(tmp_path):
    out = tmp_path / "o"
    assert main(["dataset", "--config", write_config(tmp_path, duration=0.2), "--out", str(out), "--full-depth"]) == 0
    assert len((out / "records.jsonl").read_text().splitlines()) == 6
    assert len(os.listdir(out / "depth")) == 2 * 6


# ------------------------------------------------------------ determinism


@pytest.mark.parametrize(
    "command, edits",
    [
        ("calibrate", {}),
        ("track", {"duration": 0.3}),
        ("teleop", {"actor": {"motion": "write_vico"}}),
        ("dataset", {"duration": 0.2}),
        ("info", {}),
    ],
)
def test_reruns_byte_identical_and_seed_sensitive(tmp_path, command, edits):
    cfg = write_config(tmp_path, **edits)
    a, b, c = (str(tmp_path / n) for n in "abc")
    assert main([command, "--config", cfg, "--out", a]) == 0
    assert main([command, "--config", cfg, "--out", b, "--jobs", "2"]) == 0
    assert outputs(a) == outputs(b)
    ma, mb = manifest(a), manifest(b)
    for m in (ma, mb):
        m.pop("started"), m.pop("finished")
    assert ma == mb
    assert main([command, "--config", cfg, "--out", c, "--seed", "7"]) == 0
    if command != "info":
        results = [k for k in outputs(a) if k != "scene.yaml"]
        assert any(outputs(a)[k] != outputs(c)[k] for k in results)
    assert manifest(c)["master_seed"] == 7
    assert yaml.safe_load(open(os.path.join(c, "scene.yaml")))["seed"] == 7
