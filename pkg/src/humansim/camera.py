"""Pinhole RGB-D camera models, depth noise and device presets."""

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from ._validation import as_vec3, check_positive
from .exceptions import GeometryError
from .geometry import RigidTransform, invert, transform_point

__all__ = [
    "CameraIntrinsics",
    "DepthNoiseModel",
    "CameraModel",
    "project",
    "project_points",
    "back_project",
    "in_image",
    "apply_depth_noise",
    "preset",
    "PRESETS",
    "preset_table",
]


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        check_positive(self.fx, "fx")
        check_positive(self.fy, "fy")
        if int(self.width) != self.width or int(self.height) != self.height:
            raise GeometryError("image size must be integral")
        if self.width <= 0 or self.height <= 0:
            raise GeometryError("image size must be positive")
        if not 0 < self.cx < self.width:
            raise GeometryError(f"cx={self.cx} outside (0, {self.width})")
        if not 0 < self.cy < self.height:
            raise GeometryError(f"cy={self.cy} outside (0, {self.height})")

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def horizontal_fov(self):
        """Horizontal field of view in radians."""
        return 2.0 * math.atan(self.width / (2.0 * self.fx))

    @property
    def vertical_fov(self):
        return 2.0 * math.atan(self.height / (2.0 * self.fy))


@dataclass(frozen=True)
class DepthNoiseModel:
    """Axial depth noise ``sigma(z) = sigma0 + sigma1 * z**2`` with a range cutoff."""

    sigma0: float = 0.002
    sigma1: float = 0.0005
    max_range: float = 8.0

    def __post_init__(self):
        check_positive(self.sigma0, "sigma0", strict=False)
        check_positive(self.sigma1, "sigma1", strict=False)
        check_positive(self.max_range, "max_range")

    def sigma(self, z):
        return self.sigma0 + self.sigma1 * z * z


NOISELESS_DEPTH = DepthNoiseModel(0.0, 0.0, 8.0)


@dataclass(frozen=True)
class CameraModel:
    id: str
    intrinsics: CameraIntrinsics
    world_from_camera: RigidTransform = field(default_factory=RigidTransform.identity)
    depth_noise: DepthNoiseModel = field(default_factory=DepthNoiseModel)
    pixel_noise_sigma: float = 1.0

    def __post_init__(self):
        check_positive(self.pixel_noise_sigma, "pixel_noise_sigma", strict=False)

    def with_pose(self, world_from_camera):
        return replace(self, world_from_camera=world_from_camera)

    @property
    def center(self):
        return np.array(self.world_from_camera.translation)

    @cached_property
    def camera_from_world(self):
        return invert(self.world_from_camera)

    def __eq__(self, other):
        if not isinstance(other, CameraModel):
            return NotImplemented
        return (
            self.id == other.id
            and self.intrinsics == other.intrinsics
            and self.depth_noise == other.depth_noise
            and self.pixel_noise_sigma == other.pixel_noise_sigma
            and np.array_equal(self.world_from_camera.matrix, other.world_from_camera.matrix)
        )

    __hash__ = None


def project(cam, p_world):
    """Project a world point. Returns ``(u, v, z)`` or ``None`` when behind the camera."""
    p = transform_point(cam.camera_from_world, as_vec3(p_world, "p_world"))
    if p[2] <= 0:
        return None
    k = cam.intrinsics
    return (k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy, float(p[2]))


def project_points(cam, points_world):
    """Vectorised projection. Returns ``(uv, z)``; rows with ``z <= 0`` carry NaN pixels."""
    p = transform_point(cam.camera_from_world, np.asarray(points_world, dtype=float).reshape(-1, 3))
    z = p[:, 2]
    k = cam.intrinsics
    uv = np.full((len(p), 2), np.nan)
    front = z > 0
    uv[front, 0] = k.fx * p[front, 0] / z[front] + k.cx
    uv[front, 1] = k.fy * p[front, 1] / z[front] + k.cy
    return uv, z


def pixel_ray(cam, u, v):
    """Unit world-frame direction of the ray through pixel ``(u, v)``."""
    k = cam.intrinsics
    d = np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])
    d /= np.linalg.norm(d)
    return cam.world_from_camera.rotation.matrix @ d


def back_project(cam, u, v, z):
    """World point whose projection is ``(u, v)`` at camera depth ``z``."""
    if not z > 0:
        raise GeometryError(f"back_project requires z > 0, got {z}")
    k = cam.intrinsics
    p_cam = np.array([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z])
    return transform_point(cam.world_from_camera, p_cam)


def in_image(intr, u, v):
    return bool(0 <= u < intr.width and 0 <= v < intr.height)


def apply_depth_noise(model, z, rng):
    """Noisy depth reading for true depth ``z``; ``None`` beyond ``max_range``.

    One normal variate is always consumed (when ``rng`` is given) so stream
    alignment does not depend on the noise level or on dropouts.
    """
    if not z > 0:
        raise GeometryError(f"depth must be positive, got {z}")
    eta = rng.standard_normal() if rng is not None else 0.0
    if z > model.max_range:
        return None
    s = model.sigma(z)
    if s > 0 and rng is None:
        raise ValueError("a random generator is required for non-zero depth noise")
    return max(z + s * eta, 1e-6)


def _intrinsics_from_fov(width, height, hfov_deg, vfov_deg):
    fx = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
    fy = (height / 2.0) / math.tan(math.radians(vfov_deg) / 2.0)
    return CameraIntrinsics(fx, fy, width / 2.0, height / 2.0, width, height)


# depth-stream geometry: (width, height, horizontal FoV deg, vertical FoV deg)
PRESETS = {
    "kinect_v2": (512, 424, 70.6, 60.0),
    "realsense_d435": (848, 480, 87.0, 58.0),
    "zed2": (1280, 720, 110.0, 70.0),
}


def preset(name, camera_id=None):
    """Nominal camera model for one of the supported devices, at the identity pose."""
    try:
        w, h, hfov, vfov = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown camera preset {name!r}; choose from {sorted(PRESETS)}") from None
    return CameraModel(
        id=camera_id if camera_id is not None else name,
        intrinsics=_intrinsics_from_fov(w, h, hfov, vfov),
    )


def preset_table():
    """Plain-text table of the preset intrinsics and default noise parameters."""
    header = f"{'name':<16}{'width':>6}{'height':>7}{'fx':>10}{'fy':>10}{'cx':>8}{'cy':>8}{'sigma0':>8}{'sigma1':>8}{'max_range':>10}"
    lines = [header]
    for name in PRESETS:
        cam = preset(name)
        k, d = cam.intrinsics, cam.depth_noise
        lines.append(
            f"{name:<16}{k.width:>6d}{k.height:>7d}{k.fx:>10.3f}{k.fy:>10.3f}{k.cx:>8.1f}{k.cy:>8.1f}"
            f"{d.sigma0:>8.4f}{d.sigma1:>8.4f}{d.max_range:>10.1f}"
        )
    return "\n".join(lines)
