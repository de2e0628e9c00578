"""Wrist-displacement teleoperation of a point-mass cartesian impedance controller."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_vec3, check_positive, check_probability
from .camera import preset
from .exceptions import FramingError, JointAbsentError, TrackingLostError
from .geometry import RigidTransform, look_at
from .motion.skeleton import JOINT_INDEX
from .motion.synth import VicoLayout, synthesize_motion
from .rng import derive_rng
from .scene import DEFAULT_CAPSULE_RADII, build_capsules
from .tracking import LIFT_MODES, lift_to_3d, simulate_detection

log = logging.getLogger(__name__)

__all__ = [
    "ImpedanceParams",
    "EndEffectorState",
    "TeleopConfig",
    "TeleopTrace",
    "TeleopResult",
    "hand_displacement",
    "desired_pose",
    "impedance_step",
    "energy",
    "teleop_camera",
    "path_rmse",
    "distance_to_polyline",
    "run_teleop_experiment",
    "run_near_far",
    "DROPOUT_POLICIES",
    "TRACE_HEADER",
    "POLYLINE_HEADER",
]

DROPOUT_POLICIES = ("hold", "freeze", "abort")
TRACE_HEADER = ("t_s", "des_x", "des_y", "des_z", "act_x", "act_y", "act_z")
POLYLINE_HEADER = ("seg", "x", "y", "z")
WRIST = "RWrist"


@dataclass(frozen=True)
class ImpedanceParams:
    """Isotropic mass-spring-damper; ``damping=None`` selects critical damping."""

    mass: float = 1.0
    stiffness: float = 500.0
    damping: float = None

    def __post_init__(self):
        check_positive(self.mass, "mass")
        check_positive(self.stiffness, "stiffness")
        if self.damping is None:
            object.__setattr__(self, "damping", 2.0 * math.sqrt(self.stiffness * self.mass))
        check_positive(self.damping, "damping", strict=False)

    @property
    def natural_frequency(self):
        return math.sqrt(self.stiffness / self.mass)

    @property
    def damping_ratio(self):
        return self.damping / (2.0 * math.sqrt(self.stiffness * self.mass))


@dataclass(frozen=True, eq=False)
class EndEffectorState:
    position: np.ndarray
    velocity: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec3(self.position, "position").copy())
        object.__setattr__(self, "velocity", as_vec3(self.velocity, "velocity").copy())
        if not math.isfinite(self.time):
            raise ValueError("time must be finite")

    @classmethod
    def at_rest(cls, position, time=0.0):
        return cls(position, np.zeros(3), time)


def hand_displacement(current, initial, joint=WRIST):
    """Displacement of ``joint`` from ``initial`` to ``current``."""
    for name, pose in (("current", current), ("initial", initial)):
        if not pose.present[JOINT_INDEX[joint]]:
            raise JointAbsentError(f"{joint} absent in the {name} pose")
    i = JOINT_INDEX[joint]
    return current.positions[i] - initial.positions[i]


def desired_pose(ee_initial, displacement, scale=1.0):
    check_positive(scale, "scale")
    return as_vec3(ee_initial, "ee_initial") + scale * as_vec3(displacement, "displacement")


def impedance_step(state, desired, params, dt):
    """One semi-implicit Euler step of ``m a = k (desired - x) - d v``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if dt > 0.01:
        raise ValueError(f"dt must be <= 0.01 s for the explicit scheme, got {dt}")
    desired = as_vec3(desired, "desired")
    a = (params.stiffness * (desired - state.position) - params.damping * state.velocity) / params.mass
    v = state.velocity + a * dt
    x = state.position + v * dt
    return EndEffectorState(x, v, state.time + dt)


def energy(state, desired, params):
    """Kinetic plus spring energy relative to ``desired``."""
    e = state.position - as_vec3(desired, "desired")
    return 0.5 * params.mass * float(state.velocity @ state.velocity) + 0.5 * params.stiffness * float(e @ e)


def teleop_camera(distance, preset_name="kinect_v2", height=1.3, camera_id="teleop",
                  world_from_root=None, depth_noise=None):
    """Camera ``distance`` meters in front of the actor root, looking back at it."""
    check_positive(distance, "distance")
    w = world_from_root if world_from_root is not None else RigidTransform.identity()
    r = w.rotation.matrix
    eye = w.translation + r @ np.array([0.0, distance, height])
    target = w.translation + r @ np.array([0.0, 0.0, height])
    cam = preset(preset_name, camera_id=camera_id).with_pose(look_at(eye, target, r @ np.array([0.0, 0.0, 1.0])))
    if depth_noise is not None:
        from dataclasses import replace

        cam = replace(cam, depth_noise=depth_noise)
    return cam


def distance_to_polyline(points, poly):
    """Distance of each point in ``points`` (n, 3) to the polyline ``poly`` (m, 3)."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    a, b = poly[:-1], poly[1:]
    ab = b - a
    l2 = np.sum(ab * ab, axis=1)
    ap = p[:, None, :] - a[None]
    s = np.clip(np.sum(ap * ab[None], axis=-1) / np.where(l2 > 0, l2, 1.0)[None], 0.0, 1.0)
    closest = a[None] + s[..., None] * ab[None]
    return np.min(np.linalg.norm(p[:, None, :] - closest, axis=-1), axis=1)


def path_rmse(actual, poly):
    d = distance_to_polyline(actual, poly)
    return float(np.sqrt(np.mean(d**2)))


@dataclass(frozen=True)
class TeleopConfig:
    sigma_px: float = 2.0
    p_miss: float = 0.02
    mode: str = "depth_lookup"
    params: ImpedanceParams = field(default_factory=ImpedanceParams)
    scale: float = 1.0
    ee_initial: tuple = (0.5, 0.0, 0.4)
    dropout: str = "hold"
    frame_rate: float = 30.0
    control_rate: float = 1000.0
    acquire_window: float = 1.0
    success_threshold: float = 0.03
    layout: VicoLayout = field(default_factory=VicoLayout)

    def __post_init__(self):
        check_positive(self.sigma_px, "sigma_px", strict=False)
        check_probability(self.p_miss, "p_miss")
        if self.mode not in LIFT_MODES:
            raise ValueError(f"unknown lift mode {self.mode!r}")
        if self.dropout not in DROPOUT_POLICIES:
            raise ValueError(f"unknown dropout policy {self.dropout!r}; choose from {DROPOUT_POLICIES}")
        check_positive(self.scale, "scale")
        check_positive(self.frame_rate, "frame_rate")
        check_positive(self.control_rate, "control_rate")
        if self.control_rate < self.frame_rate:
            raise ValueError("control_rate must be at least frame_rate")
        if 1.0 / self.control_rate > 0.01:
            raise ValueError("control_rate must be >= 100 Hz")
        check_positive(self.acquire_window, "acquire_window")
        check_positive(self.success_threshold, "success_threshold")


@dataclass
class TeleopTrace:
    times: np.ndarray
    desired: np.ndarray
    actual: np.ndarray
    reference: np.ndarray  # offset reference polyline in end-effector space

    def __post_init__(self):
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("trace times must be strictly increasing")

    def rows(self):
        return [(float(t), *map(float, d), *map(float, a)) for t, d, a in zip(self.times, self.desired, self.actual)]

    def polyline_rows(self):
        return [(i, *map(float, p)) for i, p in enumerate(self.reference)]


@dataclass
class TeleopResult:
    trace: TeleopTrace
    path_rmse: float
    success: bool
    dropouts: int
    acquired_frame: int
    camera_distance: float = None


def _substep_propagator(params, dt, n):
    """``n`` semi-implicit Euler steps as one 2x2 map on (position error, velocity).

    With a constant target each step is linear in ``(x - desired, v)``, so
    the sub-steps between two sensing frames collapse to a matrix power.
    """
    k, d, m = params.stiffness, params.damping, params.mass
    step = np.array([[1.0 - k * dt * dt / m, dt * (1.0 - d * dt / m)], [-k * dt / m, 1.0 - d * dt / m]])
    return np.linalg.matrix_power(step, n)


def _writing_motion(cfg, world_from_root):
    return synthesize_motion("write_vico", rate=cfg.frame_rate, world_from_root=world_from_root, layout=cfg.layout)


def run_teleop_experiment(camera, config=None, master_seed=0, trial=0, motion=None, capsules=None,
                          world_from_root=None, capsule_radii=None):
    """Drive the impedance controller from the tracked right wrist of a VICO-writing actor.

    Noise streams are keyed by ``(trial, frame)`` only, so two cameras run
    with the same seed and trial see identical noise draws.
    ``motion``/``capsules`` may be passed in to share the (camera-independent)
    kinematics across runs.
    """
    cfg = config if config is not None else TeleopConfig()
    if world_from_root is None:
        world_from_root = RigidTransform.identity()
    if motion is None:
        motion = _writing_motion(cfg, world_from_root)
    if motion.reference_path is None:
        raise ValueError("teleop needs a write_vico motion with a reference path")
    poses = list(motion)
    if capsules is None:
        radii = capsule_radii if capsule_radii is not None else DEFAULT_CAPSULE_RADII
        capsules = [build_capsules(p, radii) for p in poses]
    wi = JOINT_INDEX[WRIST]
    ee0 = as_vec3(cfg.ee_initial, "ee_initial")
    params = cfg.params
    n_sub = int(round(cfg.control_rate / cfg.frame_rate))
    dt = 1.0 / (cfg.frame_rate * n_sub)

    x = ee0.copy()
    v = np.zeros(3)
    prop = _substep_propagator(params, dt, n_sub)
    desired = ee0.copy()
    wrist0 = None
    acquired = -1
    dropouts = 0
    times, des_log, act_log = [], [], []
    for f, pose in enumerate(poses):
        t = f / cfg.frame_rate
        rng_d = derive_rng(master_seed, "teleop:detect", trial, f)
        rng_l = derive_rng(master_seed, "teleop:lift", trial, f)
        det = simulate_detection(camera, pose, capsules[f], cfg.sigma_px, cfg.p_miss, rng_d, f, joints=(WRIST,))
        est = lift_to_3d(det, camera, capsules[f], rng_l, cfg.mode, truth=pose)
        if est.present[wi]:
            wrist = est.positions[wi]
            if wrist0 is None:
                wrist0 = wrist.copy()
                acquired = f
            desired = desired_pose(ee0, wrist - wrist0, cfg.scale)
        elif wrist0 is None:
            if t >= cfg.acquire_window - 1e-12:
                raise FramingError(f"right wrist not detected within the first {cfg.acquire_window:g} s")
        else:
            dropouts += 1
            if cfg.dropout == "abort":
                raise TrackingLostError(f"right wrist lost at frame {f}")
            if cfg.dropout == "freeze":
                desired = x.copy()
        times.append(t)
        des_log.append(desired.copy())
        act_log.append(x.copy())
        # integrate until the next sensing frame
        e = np.stack([x - desired, v])
        e = prop @ e
        x, v = desired + e[0], e[1]
    if wrist0 is None:
        raise FramingError("right wrist never detected")
    wrist_true0 = poses[0].positions[wi]
    reference = motion.reference_path + (ee0 - wrist_true0)
    trace = TeleopTrace(np.array(times), np.array(des_log), np.array(act_log), reference)
    rmse = path_rmse(trace.actual, reference)
    return TeleopResult(trace, rmse, rmse < cfg.success_threshold, dropouts, acquired)


def run_near_far(distances=(2.0, 6.0), trials=20, config=None, master_seed=0, preset_name="kinect_v2",
                 depth_noise=None):
    """Path RMSE per (trial, distance) with shared kinematics and shared noise draws."""
    cfg = config if config is not None else TeleopConfig()
    motion = _writing_motion(cfg, RigidTransform.identity())
    capsules = [build_capsules(p) for p in motion]
    cams = {dist: teleop_camera(dist, preset_name, depth_noise=depth_noise) for dist in distances}
    out = []
    for trial in range(trials):
        row = {}
        for dist in distances:
            try:
                res = run_teleop_experiment(cams[dist], cfg, master_seed, trial, motion, capsules)
                row[dist] = res.path_rmse
            except FramingError:
                row[dist] = float("inf")
        out.append(row)
    return out
