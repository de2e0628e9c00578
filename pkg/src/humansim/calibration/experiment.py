"""Radius-sweep calibration experiment: sample, observe, estimate, refine, score."""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .._validation import as_vec3, check_positive
from ..camera import preset
from ..geometry import PoseError, RigidTransform, Rotation, geodesic_angle, look_at
from ..rng import derive_rng
from ..scene import default_anchor, get_prop
from .extrinsics import FiducialObservation, estimate_extrinsics, observe_fiducials, refine_global

log = logging.getLogger(__name__)

__all__ = [
    "Workspace",
    "ExperimentReport",
    "REPORT_HEADER",
    "sample_prop_poses",
    "pose_error",
    "ring_cameras",
    "simulate_calibration_observations",
    "calibrate_trial",
    "run_calibration_experiment",
]

REPORT_HEADER = ("radius_m", "prop", "trial", "mean_trans_err_m", "mean_rot_err_rad")

# local +z of a prop points toward world +x (toward the camera at azimuth 0)
NOMINAL_FACING = Rotation.from_matrix(np.column_stack([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]))


@dataclass(frozen=True)
class Workspace:
    """Axis-aligned box for prop positions plus an orientation cone.

    Orientations are ``Rz(yaw) @ nominal @ tilt``: the tilt axis is drawn
    uniformly on the cone cap of half-angle ``cone_deg`` about the nominal
    facing, and ``yaw`` is uniform in ``[-yaw_spread/2, yaw_spread/2]`` about
    the world vertical so that a full ring of cameras can see the prop.
    """

    center: tuple = (0.0, 0.0, 1.2)
    size: tuple = (1.0, 1.0, 1.0)
    cone_deg: float = 40.0
    nominal: Rotation = NOMINAL_FACING
    yaw_spread: float = 0.0

    def __post_init__(self):
        size = as_vec3(self.size, "size")
        if np.any(size < 0):
            raise ValueError("workspace box size must be non-negative")
        if not 0 <= self.cone_deg <= 180:
            raise ValueError("cone_deg must be in [0, 180]")
        check_positive(self.yaw_spread, "yaw_spread", strict=False)

    @property
    def low(self):
        return as_vec3(self.center, "center") - as_vec3(self.size, "size") / 2

    @property
    def high(self):
        return as_vec3(self.center, "center") + as_vec3(self.size, "size") / 2


def sample_prop_poses(workspace, n, rng):
    """``n`` world-from-prop poses: uniform in the box, uniform on the cone cap."""
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    n = int(n)
    low, high = workspace.low, workspace.high
    cos_max = np.cos(np.radians(workspace.cone_deg))
    out = []
    for _ in range(n):
        u = rng.random(6)
        t = low + u[:3] * (high - low)
        # uniform direction on the spherical cap: cos(theta) uniform in [cos_max, 1]
        cos_t = 1.0 - u[3] * (1.0 - cos_max)
        theta = np.arccos(np.clip(cos_t, -1.0, 1.0))
        phi = 2.0 * np.pi * u[4]
        tilt = Rotation.from_rotvec(theta * np.array([-np.sin(phi), np.cos(phi), 0.0]))
        yaw = Rotation.from_axis_angle([0.0, 0.0, 1.0], (u[5] - 0.5) * workspace.yaw_spread)
        out.append(RigidTransform(yaw * workspace.nominal * tilt, t))
    return out


def pose_error(estimated, truth):
    return PoseError(
        float(np.linalg.norm(estimated.translation - truth.translation)),
        geodesic_angle(estimated.rotation, truth.rotation),
    )


def ring_cameras(radius, count, preset_name="kinect_v2", height=1.2, noise_px=1.0):
    """``count`` cameras evenly spaced on a horizontal circle, facing its center."""
    check_positive(radius, "radius")
    if count < 1:
        raise ValueError("camera count must be >= 1")
    target = np.array([0.0, 0.0, height])
    cams = []
    for i in range(count):
        a = 2.0 * np.pi * i / count
        eye = np.array([radius * np.cos(a), radius * np.sin(a), height])
        base = preset(preset_name, camera_id=f"cam{i}")
        cams.append(
            type(base)(base.id, base.intrinsics, look_at(eye, target, (0.0, 0.0, 1.0)), base.depth_noise, noise_px)
        )
    return cams


def simulate_calibration_observations(cameras, prop, anchor, prop_poses, rng):
    """Observations of the prop in every frame plus the static anchor, camera by camera."""
    anchor_prop = anchor.as_prop()
    obs = []
    for f, pose in enumerate(prop_poses):
        for cam in cameras:
            for pid, px in observe_fiducials(cam, prop, pose, rng):
                obs.append(FiducialObservation(f, cam.id, pid, px, "prop"))
            for pid, px in observe_fiducials(cam, anchor_prop, anchor.world_from_anchor, rng):
                obs.append(FiducialObservation(f, cam.id, pid, px, "anchor"))
    return obs


def calibrate_trial(cameras, prop, anchor, prop_poses, rng, refine=True):
    """Run one full calibration; returns ``(result, [PoseError per camera])``."""
    obs = simulate_calibration_observations(cameras, prop, anchor, prop_poses, rng)
    intr = {c.id: c.intrinsics for c in cameras}
    result = estimate_extrinsics(obs, prop, anchor, intr)
    if refine:
        result = refine_global(result, obs, prop, anchor, intr)
    errors = [pose_error(result.world_from_camera[c.id], c.world_from_camera) for c in cameras]
    return result, errors


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    elapsed_s: float = 0.0

    @property
    def header(self):
        return REPORT_HEADER

    def mean_translation_by(self):
        """``{(prop, radius): mean translation error}`` over trials."""
        acc = {}
        for r in self.rows:
            acc.setdefault((r[1], r[0]), []).append(r[3])
        return {k: float(np.mean(v)) for k, v in sorted(acc.items())}

    def as_records(self):
        return [dict(zip(REPORT_HEADER, r)) for r in self.rows]


def _trial(args):
    ri, radius, pi, prop_name, trial, cfg = args
    rng = derive_rng(cfg["master_seed"], "calibration", ri, pi, trial)
    prop = get_prop(prop_name)
    cams = ring_cameras(radius, cfg["camera_count"], cfg["preset"], noise_px=cfg["noise_px"])
    poses = sample_prop_poses(cfg["workspace"], cfg["frames"], rng)
    _, errors = calibrate_trial(cams, prop, cfg["anchor"], poses, rng, refine=cfg["refine"])
    return (
        float(radius),
        prop_name,
        int(trial),
        float(np.mean([e.translation_error for e in errors])),
        float(np.mean([e.rotation_error for e in errors])),
    ), (ri, pi, trial)


def run_calibration_experiment(
    radii=(2.0, 3.0, 4.0, 5.0),
    props=("A", "B"),
    camera_count=4,
    frames=30,
    noise_px=1.0,
    trials=20,
    master_seed=0,
    preset_name="kinect_v2",
    refine=True,
    workspace=None,
    anchor=None,
    n_jobs=1,
):
    """Radius sweep. Each trial draws from its own stream keyed by
    ``(radius index, prop index, trial)``, so the report does not depend on
    ``n_jobs``."""
    radii = [float(r) for r in radii]
    for r in radii:
        check_positive(r, "radius")
    if int(trials) != trials or trials < 1:
        raise ValueError("trials must be a positive integer")
    check_positive(noise_px, "noise_px", strict=False)
    for p in props:
        get_prop(p)
    cfg = {
        "master_seed": master_seed,
        "camera_count": int(camera_count),
        "preset": preset_name,
        "noise_px": float(noise_px),
        "frames": int(frames),
        "refine": bool(refine),
        "workspace": workspace if workspace is not None else Workspace(yaw_spread=2.0 * np.pi),
        "anchor": anchor if anchor is not None else default_anchor(),
    }
    jobs = [
        (ri, r, pi, p, t, cfg)
        for ri, r in enumerate(radii)
        for pi, p in enumerate(props)
        for t in range(int(trials))
    ]
    start = time.perf_counter()
    if n_jobs is not None and n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_trial, jobs, chunksize=max(1, len(jobs) // (4 * n_jobs))))
    else:
        results = [_trial(j) for j in jobs]
    results.sort(key=lambda x: x[1])
    report = ExperimentReport([r for r, _ in results], time.perf_counter() - start)
    log.info("calibration experiment: %d trials in %.2f s", len(jobs), report.elapsed_s)
    return report
