import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from strategies import transforms

from humansim.camera import (
    PRESETS,
    CameraIntrinsics,
    CameraModel,
    DepthNoiseModel,
    apply_depth_noise,
    back_project,
    in_image,
    preset,
    preset_table,
    project,
    project_points,
)
from humansim.exceptions import GeometryError
from humansim.geometry import RigidTransform, look_at, transform_point

K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
CAM = CameraModel("c", K)


def test_principal_axis_projection():
    u, v, z = project(CAM, [0, 0, 2])
    assert (u, v, z) == (320.0, 240.0, 2.0)


def test_hand_pinhole():
    u, v, z = project(CAM, [0.5, 0, 2])
    assert u == pytest.approx(445.0, abs=1e-12)


def test_behind_camera():
    assert project(CAM, [0, 0, -1]) is None
    uv, z = project_points(CAM, np.array([[0, 0, -1.0]]))
    assert np.all(np.isnan(uv)) and z[0] == -1


def test_back_project_examples():
    np.testing.assert_allclose(back_project(CAM, 445.0, 240.0, 2.0), [0.5, 0, 2], atol=1e-15)
    cam = CAM.with_pose(look_at([1, 2, 3], [4, 2, 3], [0, 0, 1]))
    axis = cam.world_from_camera.rotation.matrix[:, 2]
    np.testing.assert_allclose(back_project(cam, K.cx, K.cy, 3.0), cam.center + 3 * axis, atol=1e-12)
    with pytest.raises(GeometryError):
        back_project(CAM, 1.0, 1.0, 0.0)


def test_in_image_bounds():
    assert in_image(K, 0, 0)
    assert not in_image(K, K.width, 0)
    assert in_image(K, K.cx, K.cy)
    assert not in_image(K, -1e-9, 5)


def test_intrinsics_validation():
    with pytest.raises(GeometryError):
        CameraIntrinsics(500, 500, 700, 240, 640, 480)
    with pytest.raises(ValueError):
        CameraIntrinsics(-1, 500, 320, 240, 640, 480)


def test_random_roundtrip_1000(rng):
    cam = CAM.with_pose(RigidTransform.from_matrix(look_at([0.3, -2, 1], [0, 0, 1], [0, 0, 1]).matrix))
    u = rng.uniform(0, K.width, 1000)
    v = rng.uniform(0, K.height, 1000)
    z = rng.uniform(0.1, 10, 1000)
    for a, b, c in zip(u, v, z):
        pu, pv, pz = project(cam, back_project(cam, a, b, c))
        assert abs(pu - a) < 1e-9 and abs(pv - b) < 1e-9 and abs(pz - c) < 1e-9


def test_depth_noise_examples(rng):
    zero = DepthNoiseModel(0.0, 0.0, 8.0)
    assert apply_depth_noise(zero, 3.0, rng) == 3.0
    assert apply_depth_noise(DepthNoiseModel(), 9.0, rng) is None
    m = DepthNoiseModel(0.002, 0.0005, 8.0)
    draws = np.array([apply_depth_noise(m, 3.0, rng) for _ in range(100_000)])
    assert np.std(draws) == pytest.approx(0.0065, rel=0.05)
    assert np.mean(draws) == pytest.approx(3.0, abs=1e-3)


def test_depth_noise_reproducible():
    m = DepthNoiseModel()
    a = [apply_depth_noise(m, 2.0, np.random.default_rng(7)) for _ in range(3)]
    assert a[0] == a[1] == a[2]


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets(name):
    a, b = preset(name), preset(name)
    assert a == b
    k = a.intrinsics
    assert 0 < k.cx < k.width and 0 < k.cy < k.height
    hfov = math.degrees(2 * math.atan(k.width / (2 * k.fx)))
    assert abs(hfov - PRESETS[name][2]) < 0.5


def test_unknown_preset():
    with pytest.raises(ValueError, match="unknown camera preset"):
        preset("webcam")


def test_preset_table_lists_every_preset():
    t = preset_table()
    for name in PRESETS:
        assert name in t


@given(transforms(), st.floats(-1, 1), st.floats(-1, 1), st.floats(0.2, 20), st.floats(0.1, 10))
def test_projection_scale_consistent(pose, x, y, z, lam):
    cam = CAM.with_pose(pose)
    p_cam = np.array([x, y, z])
    p1 = transform_point(pose, p_cam)
    p2 = transform_point(pose, lam * p_cam)
    u1, v1, z1 = project(cam, p1)
    u2, v2, z2 = project(cam, p2)
    assert abs(u1 - u2) < 1e-6 * max(1, abs(u1)) and abs(v1 - v2) < 1e-6 * max(1, abs(v1))
    assert z2 == pytest.approx(lam * z1, rel=1e-9)


@given(transforms(), st.floats(0, 639.99), st.floats(0, 479.99), st.floats(0.05, 50))
def test_project_back_project_inverse(pose, u, v, z):
    cam = CAM.with_pose(pose)
    pu, pv, pz = project(cam, back_project(cam, u, v, z))
    assert abs(pu - u) < 1e-9 * max(1.0, z) * 100 and abs(pv - v) < 1e-9 * max(1.0, z) * 100
    assert abs(pz - z) < 1e-9 * max(1.0, z)
