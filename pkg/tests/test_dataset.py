import json

import numpy as np
import pytest
import yaml

from humansim.camera import CameraIntrinsics, CameraModel, project_points
from humansim.config import MINIMAL_CONFIG, parse_scene_config
from humansim.dataset import MANIFEST_FILE, RECORDS_FILE, SNAPSHOT_FILE, export_dataset, read_pgm, write_pgm
from humansim.geometry import RigidTransform, Rotation
from humansim.reporting import file_sha256


def scene(**edits):
    d = yaml.safe_load(MINIMAL_CONFIG)
    d["cameras"].append({"id": "cam1", "preset": "zed2", "position": [2.5, 1.5, 1.0], "look_at": [0, 0, 1.0]})
    d["appearance"] = {"shirt": "red"}
    d.update(edits)
    return parse_scene_config(d)


def records(out):
    with open(out / RECORDS_FILE) as fh:
        return [json.loads(line) for line in fh]


def test_thirty_records_with_schema(tmp_path):
    s = scene()
    m = export_dataset(s, str(tmp_path))
    recs = records(tmp_path)
    assert len(recs) == 30
    assert [r["frame_id"] for r in recs] == list(range(30))
    assert recs[1]["timestamp"] == pytest.approx(1 / 30)
    r = recs[0]
    assert r["appearance"] == {"shirt": "red"}
    assert [c["id"] for c in r["cameras"]] == ["cam0", "cam1"]
    assert len(r["ground_truth"]) == 27
    assert {o["path"] for o in m.outputs} == {RECORDS_FILE, SNAPSHOT_FILE}
    assert (tmp_path / MANIFEST_FILE).exists()
    # the snapshot reparses to the same scene
    assert parse_scene_config((tmp_path / SNAPSHOT_FILE).read_text()) == s


def test_zero_noise_keypoints_reproject_from_ground_truth(tmp_path):
    export_dataset(scene(detector={"sigma_px": 0.0, "p_miss": 0.0}), str(tmp_path))
    checked = 0
    for r in records(tmp_path):
        for c in r["cameras"]:
            k = c["intrinsics"]
            pose = RigidTransform(Rotation(np.array(c["world_from_camera"]["quaternion_wxyz"])),
                                  np.array(c["world_from_camera"]["translation"]))
            cam = CameraModel(c["id"], CameraIntrinsics(**k), pose)
            for name, kp in c["keypoints"].items():
                if kp is None:
                    continue
                uv, _ = project_points(cam, np.array([r["ground_truth"][name]]))
                assert np.max(np.abs(uv[0] - kp[:2])) < 1e-6
                checked += 1
    assert checked > 1000


def test_reruns_are_byte_identical(tmp_path):
    s = scene(duration=0.2)
    a, b = tmp_path / "a", tmp_path / "b"
    ma = export_dataset(s, str(a), full_depth=True)
    mb = export_dataset(s, str(b), full_depth=True)
    assert ma.outputs == mb.outputs
    assert file_sha256(str(a / RECORDS_FILE)) == file_sha256(str(b / RECORDS_FILE))
    assert len([o for o in ma.outputs if o["path"].endswith(".pgm")]) == 2 * 6


def test_sparse_depth_samples_near_surface(tmp_path):
    export_dataset(scene(duration=0.2), str(tmp_path))
    samples = [s for r in records(tmp_path) for c in r["cameras"] for s in c["depth_samples"]]
    assert samples
    z = np.array([s[3] for s in samples])
    assert np.all((z > 0.5) & (z < 8.0))


def test_pgm_round_trip(tmp_path, rng):
    d = rng.uniform(0.3, 8.0, size=(7, 9))
    d[2, 3] = np.nan
    p = write_pgm(str(tmp_path / "d.pgm"), d)
    back = read_pgm(p)
    assert back.shape == (7, 9) and np.isnan(back[2, 3])
    ok = np.isfinite(d)
    assert np.max(np.abs(back[ok] - d[ok])) <= 0.0005 + 1e-12
    (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(ValueError):
        read_pgm(str(tmp_path / "bad.pgm"))
