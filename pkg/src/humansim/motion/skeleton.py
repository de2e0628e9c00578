"""Canonical keypoint set, skeleton poses and joint-name harmonization."""

from dataclasses import dataclass, field

import numpy as np
import yaml

# BODY-25 ordering, followed by the two hand keypoints carried by the rig
BODY25_JOINTS = (
    "Nose",
    "Neck",
    "RShoulder",
    "RElbow",
    "RWrist",
    "LShoulder",
    "LElbow",
    "LWrist",
    "MidHip",
    "RHip",
    "RKnee",
    "RAnkle",
    "LHip",
    "LKnee",
    "LAnkle",
    "REye",
    "LEye",
    "REar",
    "LEar",
    "LBigToe",
    "LSmallToe",
    "LHeel",
    "RBigToe",
    "RSmallToe",
    "RHeel",
)
HAND_JOINTS = ("RHand", "LHand")
CANONICAL_JOINTS = BODY25_JOINTS + HAND_JOINTS
JOINT_INDEX = {name: i for i, name in enumerate(CANONICAL_JOINTS)}
N_JOINTS = len(CANONICAL_JOINTS)

RIGHT_ARM = ("RShoulder", "RElbow", "RWrist", "RHand")


class SkeletonPose:
    """Timestamped canonical-joint positions with presence flags.

    ``positions`` is an ``(N_JOINTS, 3)`` array in world meters ordered as
    ``CANONICAL_JOINTS``; rows of absent joints are NaN.
    """

    __slots__ = ("timestamp", "positions", "present")

    def __init__(self, timestamp, positions, present):
        positions = np.array(positions, dtype=float)
        present = np.array(present, dtype=bool)
        if positions.shape != (N_JOINTS, 3) or present.shape != (N_JOINTS,):
            raise ValueError("pose arrays must match the canonical joint set")
        positions[~present] = np.nan
        if not np.all(np.isfinite(positions[present])):
            raise ValueError("present joints must have finite positions")
        positions.setflags(write=False)
        present.setflags(write=False)
        self.timestamp = float(timestamp)
        self.positions = positions
        self.present = present

    @classmethod
    def from_dict(cls, timestamp, joints):
        """Build from ``{name: position}``; unnamed canonical joints are absent."""
        pos = np.full((N_JOINTS, 3), np.nan)
        present = np.zeros(N_JOINTS, dtype=bool)
        for name, p in joints.items():
            i = JOINT_INDEX[name]
            pos[i] = p
            present[i] = True
        return cls(timestamp, pos, present)

    @classmethod
    def empty(cls, timestamp=0.0):
        return cls(timestamp, np.full((N_JOINTS, 3), np.nan), np.zeros(N_JOINTS, dtype=bool))

    def position(self, name):
        i = JOINT_INDEX[name]
        if not self.present[i]:
            raise KeyError(f"joint {name} is absent")
        return self.positions[i].copy()

    def is_present(self, name):
        return bool(self.present[JOINT_INDEX[name]])

    def as_dict(self):
        return {n: self.positions[i].copy() for i, n in enumerate(CANONICAL_JOINTS) if self.present[i]}

    def transformed(self, t):
        from ..geometry import transform_point

        pos = self.positions.copy()
        pos[self.present] = transform_point(t, pos[self.present])
        return SkeletonPose(self.timestamp, pos, self.present)

    def __repr__(self):
        return f"SkeletonPose(t={self.timestamp:.4f}, present={int(self.present.sum())}/{N_JOINTS})"


@dataclass(frozen=True)
class HarmonizationMap:
    """Source-name to canonical-name table plus canonical fallbacks.

    ``fallbacks[c] = p`` means: when canonical joint ``c`` has no source,
    copy the position of canonical joint ``p``.
    """

    joints: dict = field(default_factory=dict)
    fallbacks: dict = field(default_factory=dict)

    def __post_init__(self):
        for src, dst in self.joints.items():
            if dst not in JOINT_INDEX:
                raise ValueError(f"mapping {src!r} -> {dst!r}: not a canonical joint")
        for c, p in self.fallbacks.items():
            if c not in JOINT_INDEX or p not in JOINT_INDEX:
                raise ValueError(f"fallback {c!r} -> {p!r}: not canonical joints")
        for start in self.fallbacks:
            seen = {start}
            cur = start
            while cur in self.fallbacks:
                cur = self.fallbacks[cur]
                if cur in seen:
                    raise ValueError(f"fallback rules contain a cycle through {cur!r}")
                seen.add(cur)

    @classmethod
    def identity(cls):
        """Canonical names map to themselves; hands follow their wrists."""
        return cls({n: n for n in BODY25_JOINTS}, dict(DEFAULT_FALLBACKS))

    @classmethod
    def from_yaml(cls, text):
        doc = yaml.safe_load(text) or {}
        unknown = set(doc) - {"joints", "fallbacks"}
        if unknown:
            raise ValueError(f"unknown keys in harmonization map: {sorted(unknown)}")
        joints = doc.get("joints") or {}
        if isinstance(joints, list):
            joints = {str(a): str(b) for a, b in joints}
        fallbacks = doc.get("fallbacks")
        if fallbacks is None:
            fallbacks = dict(DEFAULT_FALLBACKS)
        elif isinstance(fallbacks, list):
            fallbacks = {str(a): str(b) for a, b in fallbacks}
        return cls(dict(joints), dict(fallbacks))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_yaml(fh.read())

    def to_yaml(self):
        return yaml.safe_dump(
            {"joints": [[k, v] for k, v in self.joints.items()],
             "fallbacks": [[k, v] for k, v in self.fallbacks.items()]},
            sort_keys=False,
        )


DEFAULT_FALLBACKS = {"RHand": "RWrist", "LHand": "LWrist"}

# Common BVH naming (CMU / Mixamo style, prefixes stripped)
DEFAULT_BVH_MAP = HarmonizationMap(
    {
        "Hips": "MidHip",
        "Neck": "Neck",
        "Head": "Nose",
        "RightArm": "RShoulder",
        "RightShoulder": "RShoulder",
        "RightForeArm": "RElbow",
        "RightElbow": "RElbow",
        "RightHand": "RWrist",
        "RightWrist": "RWrist",
        "LeftArm": "LShoulder",
        "LeftShoulder": "LShoulder",
        "LeftForeArm": "LElbow",
        "LeftElbow": "LElbow",
        "LeftHand": "LWrist",
        "LeftWrist": "LWrist",
        "RightUpLeg": "RHip",
        "RightLeg": "RKnee",
        "RightFoot": "RAnkle",
        "RightToeBase": "RBigToe",
        "LeftUpLeg": "LHip",
        "LeftLeg": "LKnee",
        "LeftFoot": "LAnkle",
        "LeftToeBase": "LBigToe",
    },
    dict(DEFAULT_FALLBACKS),
)


def harmonize(raw, hmap, timestamp=0.0):
    """Rename raw joint positions onto the canonical set.

    Every output position is a verbatim copy of some input position, either
    through a direct mapping or by following the fallback chain.
    """
    pos = np.full((N_JOINTS, 3), np.nan)
    present = np.zeros(N_JOINTS, dtype=bool)
    # first listed source wins when several map to one canonical joint
    for src, dst in hmap.joints.items():
        i = JOINT_INDEX[dst]
        if not present[i] and src in raw:
            pos[i] = raw[src]
            present[i] = True
    direct = present.copy()
    for name in CANONICAL_JOINTS:
        i = JOINT_INDEX[name]
        if direct[i]:
            continue
        cur = name
        while cur in hmap.fallbacks:
            cur = hmap.fallbacks[cur]
            j = JOINT_INDEX[cur]
            if direct[j]:
                pos[i] = pos[j]
                present[i] = True
                break
    return SkeletonPose(timestamp, pos, present)
