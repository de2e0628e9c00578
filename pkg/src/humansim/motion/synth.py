"""Parametric motion generators: standing, right-arm wave, and VICO writing."""

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from ..geometry import RigidTransform, transform_point
from .skeleton import BODY25_JOINTS, HarmonizationMap, harmonize

MOTION_KINDS = ("stand", "wave_right_arm", "write_vico")

# Root frame: z up, actor faces +y, actor's right is +x. Meters.
STANDING_POSE = {
    "Nose": (0.0, 0.09, 1.62),
    "Neck": (0.0, 0.0, 1.50),
    "RShoulder": (0.18, 0.0, 1.46),
    "RElbow": (0.20, 0.0, 1.17),
    "RWrist": (0.22, 0.02, 0.92),
    "LShoulder": (-0.18, 0.0, 1.46),
    "LElbow": (-0.20, 0.0, 1.17),
    "LWrist": (-0.22, 0.02, 0.92),
    "MidHip": (0.0, 0.0, 0.95),
    "RHip": (0.10, 0.0, 0.95),
    "RKnee": (0.10, 0.01, 0.52),
    "RAnkle": (0.10, 0.0, 0.09),
    "LHip": (-0.10, 0.0, 0.95),
    "LKnee": (-0.10, 0.01, 0.52),
    "LAnkle": (-0.10, 0.0, 0.09),
    "REye": (0.035, 0.075, 1.66),
    "LEye": (-0.035, 0.075, 1.66),
    "REar": (0.075, 0.0, 1.63),
    "LEar": (-0.075, 0.0, 1.63),
    "LBigToe": (-0.08, 0.17, 0.02),
    "LSmallToe": (-0.14, 0.15, 0.02),
    "LHeel": (-0.10, -0.05, 0.03),
    "RBigToe": (0.08, 0.17, 0.02),
    "RSmallToe": (0.14, 0.15, 0.02),
    "RHeel": (0.10, -0.05, 0.03),
}

# Right arm held forward for writing; the wrist starts at the first letter vertex.
WRITING_ARM = {
    "RElbow": (0.24, 0.22, 1.28),
    "RWrist": (-0.20, 0.45, 1.35),
}


@dataclass(frozen=True)
class VicoLayout:
    letter_height: float = 0.2
    letter_width: float = 0.15
    gap: float = 0.05
    speed: float = 0.1
    arc_segments: int = 16


class MotionSequence(Sequence):
    """Poses sampled at a fixed rate plus the optional ground-truth wrist path."""

    def __init__(self, poses, rate, reference_path=None):
        self.poses = list(poses)
        self.rate = float(rate)
        self.reference_path = reference_path

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    @property
    def duration(self):
        return len(self.poses) / self.rate


def vico_polyline(start, layout=VicoLayout()):
    """Vertices of a continuous polyline spelling V-I-C-O in the x-z plane.

    ``start`` is the first vertex (top-left of the V). Letters advance along +x.
    """
    start = np.asarray(start, dtype=float)
    h, w, g = layout.letter_height, layout.letter_width, layout.gap
    n = layout.arc_segments
    pts = []
    x0, top = 0.0, 0.0
    bottom = -h
    # V
    pts += [(x0, top), (x0 + w / 2, bottom), (x0 + w, top)]
    # I
    x1 = x0 + w + g
    pts += [(x1 + w / 2, top), (x1 + w / 2, bottom)]
    # C: elliptical arc from 45 deg to 315 deg through the left side
    x2 = x1 + w + g
    cx, cz = x2 + w / 2, -h / 2
    for k in range(n + 1):
        th = math.radians(45.0 + 270.0 * k / n)
        pts.append((cx + w / 2 * math.cos(th), cz + h / 2 * math.sin(th)))
    # O: closed ellipse starting and ending at the top
    x3 = x2 + w + g
    cx = x3 + w / 2
    m = n + n // 2
    for k in range(m + 1):
        th = math.radians(90.0 + 360.0 * k / m)
        pts.append((cx + w / 2 * math.cos(th), cz + h / 2 * math.sin(th)))
    out = np.array([[start[0] + x, start[1], start[2] + z] for x, z in pts])
    # the closing vertex of O coincides with its opening vertex
    out[-1] = out[-(m + 1)]
    return out


def point_along(poly, s):
    """Point at arc length ``s`` along a polyline (clamped to its ends)."""
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if s <= 0:
        return poly[0].copy()
    if s >= cum[-1]:
        return poly[-1].copy()
    k = int(np.searchsorted(cum, s, side="right") - 1)
    k = min(k, len(seg) - 1)
    while seg[k] == 0:
        k += 1
    a = (s - cum[k]) / seg[k]
    return poly[k] + a * (poly[k + 1] - poly[k])


def polyline_length(poly):
    return float(np.linalg.norm(np.diff(poly, axis=0), axis=1).sum())


def _pose_from_raw(raw, t, world_from_root, hmap):
    names = list(raw)
    pts = transform_point(world_from_root, np.array([raw[n] for n in names], dtype=float))
    return harmonize(dict(zip(names, pts)), hmap, timestamp=t)


def synthesize_motion(kind, duration=None, rate=30.0, world_from_root=None,
                      wave_frequency=1.0, layout=VicoLayout()):
    """Deterministic canonical pose sequence sampled at ``rate`` Hz.

    ``write_vico`` ignores ``duration`` unless it is longer than the path
    takes at ``layout.speed`` (the wrist then holds the final vertex).
    """
    if kind not in MOTION_KINDS:
        raise ValueError(f"unknown motion kind {kind!r}; choose from {MOTION_KINDS}")
    if not rate > 0:
        raise ValueError(f"rate must be positive, got {rate}")
    if duration is not None and not duration > 0:
        raise ValueError(f"duration must be positive, got {duration}")
    if world_from_root is None:
        world_from_root = RigidTransform.identity()
    hmap = HarmonizationMap.identity()
    base = {n: np.array(STANDING_POSE[n], dtype=float) for n in BODY25_JOINTS}

    if kind == "stand":
        if duration is None:
            raise ValueError("duration is required for 'stand'")
        n = int(round(duration * rate))
        pose = _pose_from_raw(base, 0.0, world_from_root, hmap)
        return MotionSequence(
            [type(pose)(k / rate, pose.positions, pose.present) for k in range(n)], rate
        )

    if kind == "wave_right_arm":
        if duration is None:
            raise ValueError("duration is required for 'wave_right_arm'")
        n = int(round(duration * rate))
        shoulder = base["RShoulder"]
        upper, fore = 0.29, 0.25
        poses = []
        for k in range(n):
            t = k / rate
            # upper arm raised sideways and slightly forward; forearm sweeps over the head
            swing = math.sin(2 * math.pi * wave_frequency * t)
            abd = math.radians(80.0)
            fwd = math.radians(20.0 + 15.0 * swing)
            d_up = np.array([math.sin(abd) * math.cos(fwd), math.sin(abd) * math.sin(fwd), -math.cos(abd)])
            elbow = shoulder + upper * d_up
            phi = math.radians(95.0 + 45.0 * swing)
            d_fore = np.array([math.cos(phi), 0.15, math.sin(phi)])
            d_fore /= np.linalg.norm(d_fore)
            raw = dict(base)
            raw["RElbow"] = elbow
            raw["RWrist"] = elbow + fore * d_fore
            poses.append(_pose_from_raw(raw, t, world_from_root, hmap))
        return MotionSequence(poses, rate)

    # write_vico
    start_local = np.array(WRITING_ARM["RWrist"], dtype=float)
    poly_local = vico_polyline(start_local, layout)
    path_time = polyline_length(poly_local) / layout.speed
    total = path_time if duration is None else max(duration, path_time)
    n = int(math.floor(total * rate + 1e-9)) + 1
    raw = dict(base)
    raw["RElbow"] = np.array(WRITING_ARM["RElbow"], dtype=float)
    poses = []
    for k in range(n):
        t = k / rate
        raw["RWrist"] = point_along(poly_local, layout.speed * t)
        poses.append(_pose_from_raw(raw, t, world_from_root, hmap))
    return MotionSequence(poses, rate, transform_point(world_from_root, poly_local))
