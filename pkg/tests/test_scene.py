import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from strategies import vec3

from humansim.camera import NOISELESS_DEPTH, CameraIntrinsics, CameraModel, project
from humansim.exceptions import GeometryError
from humansim.geometry import look_at
from humansim.motion import CANONICAL_JOINTS, SkeletonPose, synthesize_motion
from humansim.scene import (
    BONES,
    Capsule,
    SceneConfig,
    build_capsules,
    default_anchor,
    depth_at_pixel,
    get_prop,
    joint_visible,
    ray_capsule,
    ray_capsules,
    render_depth,
    true_depths,
    visible_mask,
)

K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
# camera at the origin looking down +z
CAM = CameraModel("c", K, depth_noise=NOISELESS_DEPTH)
STAND = synthesize_motion("stand", duration=1.0)[0]


def sphere(center, r, owners=()):
    return Capsule(center, center, r, frozenset(owners))


def test_standing_pose_has_13_capsules():
    caps = build_capsules(STAND)
    assert len(caps) == len(BONES) == 13
    torso = next(c for c in caps if c.name == "torso")
    np.testing.assert_array_equal(torso.endpoint_a, STAND.position("Neck"))
    np.testing.assert_array_equal(torso.endpoint_b, STAND.position("MidHip"))
    assert build_capsules(SkeletonPose.empty()) == []
    with pytest.raises(ValueError):
        build_capsules(STAND, {"tail": 0.1})


def test_ray_capsule_analytic_cases():
    s = sphere([0, 0, 5.0], 0.5)
    assert ray_capsule([0, 0, 0], [0, 0, 1], s) == pytest.approx(4.5, abs=1e-12)
    cyl = Capsule([0, 0, 0], [0, 0, 4], 0.2)
    assert ray_capsule([0.4, 0, -1], [0, 0, 1], cyl) is None
    # inside: exit distance
    assert ray_capsule([0, 0, 2], [1, 0, 0], cyl) == pytest.approx(0.2, abs=1e-12)
    assert ray_capsule([0, 0, 5.0], [0, 0, 1], s) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(GeometryError):
        ray_capsule([0, 0, 0], [0, 0, 2], s)


def test_capsule_radius_must_be_positive():
    with pytest.raises(GeometryError):
        Capsule([0, 0, 0], [0, 0, 1], 0.0)


@given(vec3, vec3, st.floats(0.01, 1.0), vec3, vec3)
def test_ray_capsule_hit_on_surface(a, b, r, origin, target):
    d = target - origin
    n = np.linalg.norm(d)
    assume(n > 1e-3)
    d = d / n
    c = Capsule(a, b, r)
    t = ray_capsule(origin, d, c)
    if t is not None:
        assert t >= 0
        assert c.distance(origin + t * d) == pytest.approx(r, abs=1e-9 * max(1.0, t))


@given(vec3, vec3, st.floats(0.01, 1.0), vec3)
def test_ray_toward_capsule_center_hits(a, b, r, origin):
    c = Capsule(a, b, r)
    mid = 0.5 * (a + b)
    d = mid - origin
    n = np.linalg.norm(d)
    assume(n > 1e-6)
    assert ray_capsule(origin, d / n, c) is not None


def test_batched_equals_scalar(rng):
    caps = build_capsules(STAND)
    origins = rng.normal(size=(50, 3)) * 3
    targets = rng.normal(size=(50, 3)) * 0.3 + [0, 0, 1]
    dirs = targets - origins
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    a = np.array([c.endpoint_a for c in caps])
    b = np.array([c.endpoint_b for c in caps])
    r = np.array([c.radius for c in caps])
    t = ray_capsules(origins, dirs, a, b, r)
    for i in range(50):
        for j, c in enumerate(caps):
            s = ray_capsule(origins[i], dirs[i], c)
            if s is None:
                assert not np.isfinite(t[i, j])
            else:
                assert t[i, j] == pytest.approx(s, abs=1e-12)


def test_joint_visible_examples():
    p = np.array([0, 0, 4.0])
    assert joint_visible(CAM, p, [])
    assert not joint_visible(CAM, p, [sphere([0, 0, 2.0], 0.15)])
    assert joint_visible(CAM, p, [sphere([0, 0, 2.0], 0.15, {"Nose"})], exclude="Nose")
    assert not joint_visible(CAM, [0, 0, -4.0], [])
    assert not joint_visible(CAM, [50, 0, 4.0], [])


@given(st.floats(0.0, 0.5), st.floats(0.0, 0.5), st.floats(0.01, 0.3), st.floats(1.0, 3.0))
def test_visibility_monotone_in_margin(m1, m2, r, zc):
    # occlusion needs a hit short of (distance - margin), so a larger margin only removes occluders
    lo, hi = sorted((m1, m2))
    caps = [sphere([0.05, 0, zc], r)]
    joint = np.array([0, 0, 3.2])
    if joint_visible(CAM, joint, caps, margin=lo):
        assert joint_visible(CAM, joint, caps, margin=hi)


def test_visible_mask_matches_scalar():
    cam = CameraModel("f", K, look_at([0.3, 3.0, 1.2], [0, 0, 1.0], [0, 0, 1]), NOISELESS_DEPTH)
    for pose in synthesize_motion("wave_right_arm", duration=1.0, rate=5.0):
        caps = build_capsules(pose)
        mask = visible_mask(cam, pose, caps)
        for i, name in enumerate(CANONICAL_JOINTS):
            expect = joint_visible(cam, pose.positions[i], caps, exclude=name)
            assert mask[i] == expect, name


def test_depth_at_pixel_examples(rng):
    s = sphere([0, 0, 3.0], 0.2)
    assert depth_at_pixel(CAM, K.cx, K.cy, [s]) == pytest.approx(2.8, abs=1e-12)
    assert depth_at_pixel(CAM, 5.0, 5.0, [s]) is None
    a = depth_at_pixel(CAM, K.cx, K.cy, [s], np.random.default_rng(1))
    b = depth_at_pixel(CAM, K.cx, K.cy, [s], np.random.default_rng(999))
    assert a == b
    with pytest.raises(GeometryError):
        depth_at_pixel(CAM, -1, 0, [s])


def test_surface_in_front_of_joint():
    cam = CameraModel("f", K, look_at([0.0, 3.0, 1.2], [0, 0, 1.0], [0, 0, 1]), NOISELESS_DEPTH)
    caps = build_capsules(STAND)
    mask = visible_mask(cam, STAND, caps)
    for i in np.flatnonzero(mask):
        u, v, z = project(cam, STAND.positions[i])
        d = depth_at_pixel(cam, u, v, caps)
        assert d is not None and d <= z + 1e-12


def test_render_depth_matches_pixel_queries():
    cam = CameraModel("f", CameraIntrinsics(80, 80, 40, 30, 80, 60), look_at([0.0, 3.0, 1.0], [0, 0, 1.0], [0, 0, 1]),
                      NOISELESS_DEPTH)
    caps = build_capsules(STAND)
    img = render_depth(cam, caps)
    assert img.shape == (60, 80)
    assert np.isfinite(img).sum() > 100
    uu, vv = np.meshgrid(np.arange(80) + 0.5, np.arange(60) + 0.5)
    ref = true_depths(cam, np.column_stack([uu.ravel(), vv.ravel()]), caps).reshape(60, 80)
    np.testing.assert_array_equal(np.isnan(img), np.isnan(ref))
    np.testing.assert_allclose(img[np.isfinite(img)], ref[np.isfinite(ref)], atol=1e-12)
    for v, u in [(30, 40), (10, 5), (45, 38)]:
        d = depth_at_pixel(cam, u + 0.5, v + 0.5, caps)
        assert (d is None and np.isnan(img[v, u])) or d == pytest.approx(img[v, u], abs=1e-12)
    assert render_depth(cam, caps, stride=4).shape == (15, 20)


def test_props_and_anchor():
    assert get_prop("A").planar and not get_prop("B").planar
    with pytest.raises(ValueError):
        get_prop("C")
    anchor = default_anchor()
    assert anchor.fiducial_points.shape == (4, 3)


def test_scene_config_validation():
    with pytest.raises(ValueError, match="duplicate"):
        SceneConfig((CAM, CAM))
    with pytest.raises(ValueError):
        SceneConfig((CAM,), frame_rate=0.0)
    with pytest.raises(ValueError):
        SceneConfig((CAM,), frame_rate=10.0, duration=0.01)
    assert SceneConfig((CAM,), duration=2.0).n_frames == 60
    assert SceneConfig((CAM,)) == SceneConfig((CAM,))
