from .bvh import (
    BvhClip,
    BvhJoint,
    forward_kinematics,
    interpolate_channels,
    load_bvh,
    parse_bvh,
    sample_pose,
    serialize_bvh,
)
from .skeleton import (
    BODY25_JOINTS,
    CANONICAL_JOINTS,
    DEFAULT_BVH_MAP,
    HAND_JOINTS,
    JOINT_INDEX,
    N_JOINTS,
    RIGHT_ARM,
    HarmonizationMap,
    SkeletonPose,
    harmonize,
)
from .synth import MOTION_KINDS, MotionSequence, VicoLayout, synthesize_motion, vico_polyline

__all__ = [
    "BvhClip",
    "BvhJoint",
    "forward_kinematics",
    "interpolate_channels",
    "load_bvh",
    "parse_bvh",
    "sample_pose",
    "serialize_bvh",
    "BODY25_JOINTS",
    "CANONICAL_JOINTS",
    "DEFAULT_BVH_MAP",
    "HAND_JOINTS",
    "JOINT_INDEX",
    "N_JOINTS",
    "RIGHT_ARM",
    "HarmonizationMap",
    "SkeletonPose",
    "harmonize",
    "MOTION_KINDS",
    "MotionSequence",
    "VicoLayout",
    "synthesize_motion",
    "vico_polyline",
]
