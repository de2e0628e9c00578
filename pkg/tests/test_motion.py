import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from humansim.exceptions import BvhParseError
from humansim.geometry import RigidTransform, Rotation
from humansim.motion import (
    CANONICAL_JOINTS,
    JOINT_INDEX,
    N_JOINTS,
    RIGHT_ARM,
    BvhClip,
    HarmonizationMap,
    SkeletonPose,
    forward_kinematics,
    harmonize,
    parse_bvh,
    sample_pose,
    serialize_bvh,
    synthesize_motion,
)
from humansim.motion.synth import VicoLayout, polyline_length, vico_polyline

MINIMAL = """HIERARCHY
ROOT Hips
{
  OFFSET 1 2 3
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
}
MOTION
Frames: 1
Frame Time: 0.0333333
0 0 0 0 0 0
"""

END_SITE = """HIERARCHY
ROOT Hips
{
  OFFSET 0 0 0
  CHANNELS 3 Zrotation Xrotation Yrotation
  End Site
  {
    OFFSET 0 10 0
  }
}
MOTION
Frames: 1
Frame Time: 0.01
0 0 0
"""

# root + two 1 m bones along +y (unit_scale 1)
CHAIN = """HIERARCHY
ROOT A
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  JOINT B
  {
    OFFSET 0 1 0
    CHANNELS 3 Zrotation Xrotation Yrotation
    JOINT C
    {
      OFFSET 0 1 0
      CHANNELS 3 Zrotation Xrotation Yrotation
      End Site
      {
        OFFSET 0 0.5 0
      }
    }
  }
}
MOTION
Frames: 2
Frame Time: 0.5
0 0 0 90 0 0 0 0 0 0 0 0
1 0 0 90 0 0 0 0 0 0 0 0
"""


def chain_clip(frames):
    clip = parse_bvh(CHAIN, unit_scale=1.0)
    return BvhClip(clip.root, 0.1, frames, 1.0)


def clips_equal(a, b, tol=1e-9):
    ja, jb = a.joints, b.joints
    assert [j.name for j in ja] == [j.name for j in jb]
    for x, y in zip(ja, jb):
        assert x.channels == y.channels
        np.testing.assert_allclose(x.offset, y.offset, atol=tol)
        assert (x.end_site_offset is None) == (y.end_site_offset is None)
        if x.end_site_offset is not None:
            np.testing.assert_allclose(x.end_site_offset, y.end_site_offset, atol=tol)
    assert a.frame_time == pytest.approx(b.frame_time, abs=tol)
    np.testing.assert_allclose(a.frames, b.frames, atol=tol)


# --------------------------------------------------------------------- BVH


def test_minimal_clip():
    clip = parse_bvh(MINIMAL)
    assert clip.frame_time == pytest.approx(0.0333333)
    assert clip.n_frames == 1 and clip.channel_count == 6
    np.testing.assert_allclose(clip.root.offset, [0.01, 0.02, 0.03])


def test_missing_motion_section():
    with pytest.raises(BvhParseError, match="MOTION"):
        parse_bvh(MINIMAL.split("MOTION")[0])


def test_end_site_captured_without_channels():
    clip = parse_bvh(END_SITE)
    np.testing.assert_allclose(clip.root.end_site_offset, [0, 0.1, 0])
    assert clip.channel_count == 3


@pytest.mark.parametrize(
    "text, fragment",
    [
        (MINIMAL.replace("HIERARCHY", "HIERARCH"), "HIERARCHY"),
        (MINIMAL.replace("0 0 0 0 0 0", "0 0 0 0 0"), "line 10"),
        (MINIMAL.replace("0 0 0 0 0 0", "0 0 x 0 0 0"), "non-numeric"),
        (CHAIN.replace("JOINT C", "JOINT B"), "duplicate"),
    ],
)
def test_parse_errors_carry_line_numbers(text, fragment):
    with pytest.raises(BvhParseError, match=fragment) as info:
        parse_bvh(text)
    assert info.value.line is not None


def test_roundtrip_minimal_and_chain():
    for text in (MINIMAL, END_SITE):
        c = parse_bvh(text)
        clips_equal(parse_bvh(serialize_bvh(c)), c)
    rng = np.random.default_rng(3)
    c = chain_clip(rng.uniform(-90, 90, (10, 12)))
    back = parse_bvh(serialize_bvh(c), unit_scale=1.0)
    clips_equal(back, c)
    # the roundtrip is a fixed point of the text too
    assert serialize_bvh(back) == serialize_bvh(c)


def test_frame_time_printed_faithfully():
    c = parse_bvh(MINIMAL)
    assert "Frame Time: 0.0333333" in serialize_bvh(c)


def test_fk_zero_channels_is_offset_sum():
    clip = chain_clip(np.zeros((1, 12)))
    fk = forward_kinematics(clip, 0)
    np.testing.assert_allclose(fk["B"], [0, 1, 0])
    np.testing.assert_allclose(fk["C"], [0, 2, 0])
    np.testing.assert_allclose(fk["C_end"], [0, 2.5, 0])


def test_fk_planar_chain():
    clip = parse_bvh(CHAIN, unit_scale=1.0)
    fk = forward_kinematics(clip, 0)
    np.testing.assert_allclose(fk["B"], [-1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(fk["C"], [-2, 0, 0], atol=1e-15)
    with pytest.raises(IndexError):
        forward_kinematics(clip, 2)


def test_sample_pose_examples():
    text = CHAIN.replace("A\n", "Hips\n").replace("JOINT B", "JOINT RightArm").replace("JOINT C", "JOINT RightForeArm")
    clip = parse_bvh(text, unit_scale=1.0)
    p0 = sample_pose(clip, 0.0)
    fk = forward_kinematics(clip, 0)
    np.testing.assert_allclose(p0.position("RShoulder"), fk["RightArm"])
    mid = sample_pose(clip, 0.25)
    assert mid.position("MidHip")[0] == pytest.approx(0.5)
    shifted = sample_pose(clip, 0.25, RigidTransform(Rotation.identity(), np.array([5.0, 0, 0])))
    np.testing.assert_allclose(shifted.positions[mid.present] - mid.positions[mid.present], [[5, 0, 0]] * mid.present.sum())
    with pytest.raises(ValueError):
        sample_pose(clip, 0.6)


angles = arrays(float, (4, 12), elements=st.floats(-180, 180))


@given(angles)
def test_fk_rigidity(frames):
    frames[:, :3] = np.clip(frames[:, :3], -5, 5)
    clip = chain_clip(frames)
    for f in range(clip.n_frames):
        fk = forward_kinematics(clip, f)
        assert abs(np.linalg.norm(fk["B"] - fk["A"]) - 1.0) < 1e-9
        assert abs(np.linalg.norm(fk["C"] - fk["B"]) - 1.0) < 1e-9
        assert abs(np.linalg.norm(fk["C_end"] - fk["C"]) - 0.5) < 1e-9


@given(angles, st.floats(0.0, 0.3 - 1e-6))
def test_sample_pose_continuous(frames, t):
    frames[:, :3] = np.clip(frames[:, :3], -5, 5)
    text = CHAIN.replace("JOINT B", "JOINT RightArm").replace("JOINT C", "JOINT RightForeArm")
    clip = parse_bvh(text, unit_scale=1.0)
    clip = BvhClip(clip.root, 0.1, frames, 1.0)
    a, b = sample_pose(clip, t), sample_pose(clip, t + 1e-6)
    assert np.nanmax(np.abs(a.positions - b.positions)) < 1e-3


@given(angles)
def test_serialize_parse_fixed_point(frames):
    clip = chain_clip(frames)
    clips_equal(parse_bvh(serialize_bvh(clip), unit_scale=1.0), clip, tol=1e-9)


# -------------------------------------------------------------- harmonize


def test_harmonize_wrist_fallback():
    p = np.array([0.1, 0.2, 0.3])
    pose = harmonize({"RightWrist": p}, HarmonizationMap({"RightWrist": "RWrist"}, {"RHand": "RWrist"}))
    np.testing.assert_array_equal(pose.position("RWrist"), p)
    np.testing.assert_array_equal(pose.position("RHand"), p)
    assert pose.present.sum() == 2


def test_harmonize_empty_and_full():
    assert not harmonize({}, HarmonizationMap.identity()).present.any()
    rng = np.random.default_rng(0)
    raw = {n: rng.normal(size=3) for n in CANONICAL_JOINTS}
    pose = harmonize(raw, HarmonizationMap({n: n for n in CANONICAL_JOINTS}))
    assert pose.present.all()
    for n in CANONICAL_JOINTS:
        np.testing.assert_array_equal(pose.position(n), raw[n])


def test_harmonization_map_validation_and_yaml():
    with pytest.raises(ValueError, match="cycle"):
        HarmonizationMap({}, {"RHand": "LHand", "LHand": "RHand"})
    with pytest.raises(ValueError):
        HarmonizationMap({"x": "Pelvis"})
    m = HarmonizationMap.identity()
    assert HarmonizationMap.from_yaml(m.to_yaml()) == m


@given(st.dictionaries(st.sampled_from(list(CANONICAL_JOINTS) + ["Extra", "Hips"]),
                       arrays(float, 3, elements=st.floats(-5, 5)), max_size=12))
def test_harmonize_never_invents(raw):
    pose = harmonize(raw, HarmonizationMap.identity())
    inputs = [tuple(v) for v in raw.values()]
    for i in np.flatnonzero(pose.present):
        assert tuple(pose.positions[i]) in inputs


# --------------------------------------------------------------- synthesis


def test_stand_is_static():
    seq = synthesize_motion("stand", duration=1.0, rate=30.0)
    assert len(seq) == 30
    for p in seq:
        np.testing.assert_array_equal(p.positions[p.present], seq[0].positions[seq[0].present])


def test_write_vico_on_polyline_at_constant_speed():
    layout = VicoLayout()
    seq = synthesize_motion("write_vico", rate=30.0)
    poly = seq.reference_path
    assert polyline_length(poly) > 1.0
    wrist = np.array([p.position("RWrist") for p in seq])
    seg_a, seg_b = poly[:-1], poly[1:]

    def dist(x):
        d = seg_b - seg_a
        t = np.clip(np.einsum("ij,ij->i", x - seg_a, d) / np.maximum(np.einsum("ij,ij->i", d, d), 1e-300), 0, 1)
        return np.min(np.linalg.norm(seg_a + t[:, None] * d - x, axis=1))

    assert max(dist(w) for w in wrist) < 1e-12
    # the first V stroke is straight and long enough to check spacing
    steps = np.linalg.norm(np.diff(wrist[:10], axis=0), axis=1)
    np.testing.assert_allclose(steps, layout.speed / 30.0, atol=1e-9)
    # other joints frozen, hands follow wrists, path lies in a vertical x-z plane
    others = [JOINT_INDEX[n] for n in CANONICAL_JOINTS if n not in ("RWrist", "RHand")]
    np.testing.assert_array_equal(seq[0].positions[others], seq[-1].positions[others])
    np.testing.assert_array_equal(seq[5].position("RHand"), seq[5].position("RWrist"))
    assert np.ptp(poly[:, 1]) == 0.0
    np.testing.assert_allclose(vico_polyline(poly[0]), poly, atol=1e-12)


def test_wave_locality():
    seq = synthesize_motion("wave_right_arm", duration=2.0, rate=30.0)
    pos = np.array([p.positions for p in seq])
    moving = np.nanmax(np.abs(pos - pos[0]), axis=(0, 2)) > 0
    allowed = {JOINT_INDEX[n] for n in RIGHT_ARM}
    assert moving.any()
    assert set(np.flatnonzero(moving)) <= allowed


@pytest.mark.parametrize("kwargs", [dict(duration=0.0), dict(duration=1.0, rate=0.0), dict(duration=-1.0)])
def test_synthesis_rejects_bad_params(kwargs):
    with pytest.raises(ValueError):
        synthesize_motion("stand", **kwargs)


def test_pose_invariants():
    with pytest.raises(ValueError):
        SkeletonPose(0.0, np.full((N_JOINTS, 3), np.inf), np.ones(N_JOINTS, bool))
    p = SkeletonPose.empty()
    with pytest.raises(KeyError):
        p.position("Nose")
