"""Synthetic multi-camera human-motion simulator: motion sources, RGB-D cameras,
occlusion-aware keypoint sensing, extrinsic calibration, multi-view fusion and
impedance teleoperation, with seeded and reproducible experiment runners."""

__version__ = "0.1.0"

from .camera import CameraIntrinsics, CameraModel, DepthNoiseModel, preset  # noqa: E402
from .config import load_scene_config, parse_scene_config  # noqa: E402
from .exceptions import (  # noqa: E402
    ConfigError,
    FramingError,
    GeometryError,
    HumanSimError,
)
from .geometry import RigidTransform, Rotation  # noqa: E402
from .scene import SceneConfig  # noqa: E402

__all__ = [
    "__version__",
    "CameraIntrinsics",
    "CameraModel",
    "DepthNoiseModel",
    "preset",
    "load_scene_config",
    "parse_scene_config",
    "ConfigError",
    "FramingError",
    "GeometryError",
    "HumanSimError",
    "RigidTransform",
    "Rotation",
    "SceneConfig",
]
