"""Simulated 2D keypoint detection, depth lifting, multi-camera fusion and evaluation."""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive, check_probability
from .camera import preset
from .geometry import look_at
from .motion.skeleton import CANONICAL_JOINTS, JOINT_INDEX, N_JOINTS
from .rng import derive_rng
from .scene import ActorSpec, SceneConfig, actor_sequence, build_capsules, true_depths, visible_mask

log = logging.getLogger(__name__)

__all__ = [
    "LIFT_MODES",
    "FUSED",
    "Detection2D",
    "CameraSkeletonEstimate",
    "FusedSkeleton",
    "JointMetrics",
    "TrackingMetrics",
    "TrackingRun",
    "simulate_detection",
    "lift_to_3d",
    "fuse_average",
    "evaluate_tracking",
    "run_tracking_experiment",
    "tracking_scene",
    "AverageFusion",
    "LOG_HEADER",
    "METRICS_HEADER",
]

LIFT_MODES = ("depth_lookup", "direct_depth")
FUSED = "fused"
DEFAULT_CONFIDENCE = 0.8
DEFAULT_SIGMA_PX = 2.0
DEFAULT_P_MISS = 0.02
LOG_HEADER = ("frame", "t_s", "source", "joint", "present", "x", "y", "z", "gt_x", "gt_y", "gt_z", "conf")
METRICS_HEADER = ("source", "joint", "rmse_m", "detection_rate", "frames")


def _frozen(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Detection2D:
    """Per-joint pixels (NaN when undetected), confidences and detected flags."""

    camera_id: str
    frame_id: int
    pixels: np.ndarray
    confidence: np.ndarray
    detected: np.ndarray

    def __post_init__(self):
        pix = np.array(self.pixels, dtype=float).reshape(N_JOINTS, 2)
        conf = np.array(self.confidence, dtype=float).reshape(N_JOINTS)
        det = np.array(self.detected, dtype=bool).reshape(N_JOINTS)
        if np.any((conf > 0) != det):
            raise ValueError("confidence must be positive exactly for detected joints")
        if np.any((conf < 0) | (conf > 1)):
            raise ValueError("confidence must lie in [0, 1]")
        pix[~det] = np.nan
        object.__setattr__(self, "pixels", _frozen(pix))
        object.__setattr__(self, "confidence", _frozen(conf))
        object.__setattr__(self, "detected", _frozen(det))


@dataclass(frozen=True, eq=False)
class CameraSkeletonEstimate:
    """World-frame joint estimates from one camera; rows of absent joints are NaN."""

    camera_id: str
    frame_id: int
    positions: np.ndarray
    confidence: np.ndarray
    present: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(N_JOINTS, 3)
        conf = np.array(self.confidence, dtype=float).reshape(N_JOINTS)
        pres = np.array(self.present, dtype=bool).reshape(N_JOINTS)
        if np.any(pres & ~(conf > 0)) or not np.all(np.isfinite(pos[pres])):
            raise ValueError("present joints need a finite position and positive confidence")
        pos[~pres] = np.nan
        conf = np.where(pres, conf, 0.0)
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "confidence", _frozen(conf))
        object.__setattr__(self, "present", _frozen(pres))


@dataclass(frozen=True, eq=False)
class FusedSkeleton:
    frame_id: int
    positions: np.ndarray
    counts: np.ndarray
    present: np.ndarray
    confidence: np.ndarray = None  # mean contributor confidence, 0 when absent

    def __post_init__(self):
        counts = np.array(self.counts, dtype=int).reshape(N_JOINTS)
        pres = np.array(self.present, dtype=bool).reshape(N_JOINTS)
        if np.any(pres & (counts < 1)):
            raise ValueError("present fused joints need at least one contributor")
        pos = np.array(self.positions, dtype=float).reshape(N_JOINTS, 3)
        pos[~pres] = np.nan
        conf = np.zeros(N_JOINTS) if self.confidence is None else np.array(self.confidence, dtype=float)
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "counts", _frozen(counts))
        object.__setattr__(self, "present", _frozen(pres))
        object.__setattr__(self, "confidence", _frozen(np.where(pres, conf, 0.0)))


def simulate_detection(cam, pose, capsules, sigma_px=DEFAULT_SIGMA_PX, p_miss=DEFAULT_P_MISS, rng=None,
                       frame_id=0, confidence=DEFAULT_CONFIDENCE, joints=None):
    """Parametric stand-in for a 2D keypoint detector.

    A present joint is detected when it is in view, not occluded and not
    dropped with probability ``p_miss``. Per joint one uniform and two
    normal variates are always drawn so that the stream does not depend on
    visibility. ``joints`` (names) restricts detection to a subset; the
    draws for the subset are identical to a full run.
    """
    check_positive(sigma_px, "sigma_px", strict=False)
    check_probability(p_miss, "p_miss")
    check_probability(confidence, "confidence")
    if not confidence > 0:
        raise ValueError("confidence must be positive")
    if rng is None and (sigma_px > 0 or 0 < p_miss < 1):
        raise ValueError("a random generator is required for noisy detection")
    if rng is not None:
        u = rng.random(N_JOINTS)
        eta = rng.standard_normal((N_JOINTS, 2))
    else:
        u = np.ones(N_JOINTS)
        eta = np.zeros((N_JOINTS, 2))
    subset = None
    if joints is not None:
        subset = np.zeros(N_JOINTS, dtype=bool)
        subset[[JOINT_INDEX[j] for j in joints]] = True
    visible = visible_mask(cam, pose, capsules, subset=subset)
    detected = visible & ~(u < p_miss)
    from .camera import project_points

    uv, _ = project_points(cam, np.where(pose.present[:, None], pose.positions, 0.0))
    pixels = np.where(detected[:, None], uv + sigma_px * eta, np.nan)
    conf = np.where(detected, float(confidence), 0.0)
    return Detection2D(cam.id, int(frame_id), pixels, conf, detected)


def lift_to_3d(det, cam, capsules, rng=None, mode="depth_lookup", truth=None):
    """World-frame joint estimates from 2D detections and depth.

    ``depth_lookup`` reads the depth of the first body surface along the
    detected pixel's ray; a pixel off the silhouette gives no return and the
    joint is dropped. ``direct_depth`` uses the true joint depth (``truth``
    pose required) plus sensor noise. One normal variate per joint is drawn
    in either mode.
    """
    if det.camera_id != cam.id:
        raise ValueError(f"detection from camera {det.camera_id!r} lifted with camera {cam.id!r}")
    if mode not in LIFT_MODES:
        raise ValueError(f"unknown lift mode {mode!r}; choose from {LIFT_MODES}")
    noise = cam.depth_noise
    eta = rng.standard_normal(N_JOINTS) if rng is not None else np.zeros(N_JOINTS)
    if rng is None and (noise.sigma0 > 0 or noise.sigma1 > 0):
        raise ValueError("a random generator is required for non-zero depth noise")
    k = cam.intrinsics
    pix = det.pixels
    ok = det.detected.copy()
    z = np.full(N_JOINTS, np.nan)
    if mode == "depth_lookup":
        with np.errstate(invalid="ignore"):
            in_img = (pix[:, 0] >= 0) & (pix[:, 0] < k.width) & (pix[:, 1] >= 0) & (pix[:, 1] < k.height)
        ok &= in_img
        z[ok] = true_depths(cam, pix[ok], capsules)
    else:
        if truth is None:
            raise ValueError("direct_depth mode needs the ground-truth pose")
        ok &= truth.present
        pc = (truth.positions[ok] - cam.center) @ cam.world_from_camera.rotation.matrix
        z[ok] = pc[:, 2]
    with np.errstate(invalid="ignore"):
        ok &= np.isfinite(z) & (z > 0) & (z <= noise.max_range)
    zn = np.maximum(z[ok] + noise.sigma(z[ok]) * eta[ok], 1e-6)
    p_cam = np.column_stack([(pix[ok, 0] - k.cx) * zn / k.fx, (pix[ok, 1] - k.cy) * zn / k.fy, zn])
    pos = np.full((N_JOINTS, 3), np.nan)
    pos[ok] = p_cam @ cam.world_from_camera.rotation.matrix.T + cam.center
    return CameraSkeletonEstimate(cam.id, det.frame_id, pos, np.where(ok, det.confidence, 0.0), ok)


def fuse_average(estimates, min_confidence=0.0):
    """Confidence-weighted mean of the per-camera estimates of each joint."""
    estimates = list(estimates)
    if not estimates:
        raise ValueError("fuse_average needs at least one estimate")
    frames = {e.frame_id for e in estimates}
    if len(frames) != 1:
        raise ValueError(f"estimates mix frame ids {sorted(frames)}")
    # fixed summation order keeps the result independent of the input order
    estimates.sort(key=lambda e: e.camera_id)
    pos = np.array([e.positions for e in estimates])
    conf = np.array([e.confidence for e in estimates])
    use = np.array([e.present for e in estimates]) & (conf >= min_confidence) & (conf > 0)
    w = np.where(use, conf, 0.0)
    wsum = w.sum(axis=0)
    counts = use.sum(axis=0)
    present = counts > 0
    fused = np.full((N_JOINTS, 3), np.nan)
    num = np.einsum("cj,cjk->jk", w, np.where(use[..., None], pos, 0.0))
    fused[present] = num[present] / wsum[present, None]
    # a lone contributor passes through bit-exactly (w * p / w can round)
    single = counts == 1
    if single.any():
        k = np.argmax(use[:, single], axis=0)
        fused[single] = pos[k, np.flatnonzero(single)]
    mean_conf = np.where(present, wsum / np.maximum(counts, 1), 0.0)
    return FusedSkeleton(frames.pop(), fused, counts, present, mean_conf)


class AverageFusion(TransformerMixin, BaseEstimator):
    """Array form of :func:`fuse_average`.

    ``transform`` takes positions ``(n_frames, n_cameras, n_joints, 3)``
    with NaN rows for absent joints and, optionally, confidences
    ``(n_frames, n_cameras, n_joints)`` (absent joints should carry 0). It
    returns fused positions ``(n_frames, n_joints, 3)``, NaN where no camera
    contributes.
    """

    def __init__(self, min_confidence=0.0):
        self.min_confidence = min_confidence

    def fit(self, X, y=None, confidence=None):
        X = self._check(X)
        check_probability(self.min_confidence, "min_confidence")
        self.n_cameras_ = X.shape[1]
        self.n_joints_ = X.shape[2]
        return self

    @staticmethod
    def _check(X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 4 or X.shape[-1] != 3:
            raise ValueError(f"expected (n_frames, n_cameras, n_joints, 3), got shape {X.shape}")
        return X

    def transform(self, X, confidence=None):
        check_is_fitted(self, "n_joints_")
        X = self._check(X)
        if X.shape[1:3] != (self.n_cameras_, self.n_joints_):
            raise ValueError("camera/joint layout differs from the fitted one")
        present = np.all(np.isfinite(X), axis=-1)
        if confidence is None:
            conf = np.where(present, 1.0, 0.0)
        else:
            conf = np.asarray(confidence, dtype=float)
            if conf.shape != X.shape[:3]:
                raise ValueError("confidence must have shape (n_frames, n_cameras, n_joints)")
        use = present & (conf >= self.min_confidence) & (conf > 0)
        w = np.where(use, conf, 0.0)
        wsum = w.sum(axis=1)
        num = np.einsum("fcj,fcjk->fjk", w, np.where(use[..., None], X, 0.0))
        out = np.full(num.shape, np.nan)
        ok = wsum > 0
        out[ok] = num[ok] / wsum[ok][:, None]
        single = use.sum(axis=1) == 1
        if single.any():
            f, j = np.nonzero(single)
            out[f, j] = X[f, np.argmax(use, axis=1)[f, j], j]
        return out

    def fit_transform(self, X, y=None, confidence=None):
        return self.fit(X).transform(X, confidence)


@dataclass(frozen=True)
class JointMetrics:
    rmse: float  # None when the estimate and truth never overlap
    detection_rate: float  # None when the truth is never present
    frames: int  # frames entering the RMSE


@dataclass
class TrackingMetrics:
    """``entries[(source, joint)] -> JointMetrics``; ``sources`` keeps report order."""

    sources: tuple
    entries: dict

    def get(self, source, joint):
        return self.entries[(source, joint)]

    def rmse(self, source, joint):
        return self.entries[(source, joint)].rmse

    def detection_rate(self, source, joint):
        return self.entries[(source, joint)].detection_rate

    def rows(self):
        out = []
        for s in self.sources:
            for j in CANONICAL_JOINTS:
                m = self.entries[(s, j)]
                out.append((s, j, m.rmse, m.detection_rate, m.frames))
        return out


def _as_frame_map(items):
    if isinstance(items, dict):
        return dict(items)
    out = {}
    for i, it in enumerate(items):
        out[getattr(it, "frame_id", i)] = it
    return out


def evaluate_tracking(estimates, truth):
    """Per-source, per-joint RMSE and detection rate against the truth.

    ``estimates`` maps a source name to per-frame estimates (objects with
    ``frame_id``, ``positions`` and ``present``); ``truth`` is a sequence of
    poses indexed by frame id, or a ``{frame_id: pose}`` map.
    """
    truth = _as_frame_map(truth)
    sources = tuple(estimates)
    entries = {}
    any_overlap = False
    for s in sources:
        est = _as_frame_map(estimates[s])
        frames = sorted(set(est) & set(truth))
        any_overlap |= bool(frames)
        if frames:
            e_pos = np.array([est[f].positions for f in frames])
            e_pres = np.array([est[f].present for f in frames])
            t_pos = np.array([truth[f].positions for f in frames])
            t_pres = np.array([truth[f].present for f in frames])
        else:
            e_pos = t_pos = np.zeros((0, N_JOINTS, 3))
            e_pres = t_pres = np.zeros((0, N_JOINTS), dtype=bool)
        both = e_pres & t_pres
        with np.errstate(invalid="ignore"):
            sq = np.where(both, np.sum((e_pos - t_pos) ** 2, axis=-1), 0.0)
        n_both = both.sum(axis=0)
        n_truth = t_pres.sum(axis=0)
        for j, name in enumerate(CANONICAL_JOINTS):
            rmse = float(np.sqrt(sq[:, j].sum() / n_both[j])) if n_both[j] else None
            rate = float(n_both[j] / n_truth[j]) if n_truth[j] else None
            entries[(s, name)] = JointMetrics(rmse, rate, int(n_both[j]))
    if not any_overlap:
        raise ValueError("estimates and ground truth share no frames")
    return TrackingMetrics(sources, entries)


def tracking_scene(master_seed=0, duration=10.0, frame_rate=30.0, radius=3.0, n_cameras=3, motion="wave_right_arm",
                   preset_name="kinect_v2", height=1.2, detector=None):
    """Cameras evenly spaced on a circle around an actor at the origin (first camera in front)."""
    cams = []
    for i in range(n_cameras):
        a = np.pi / 2 + 2 * np.pi * i / n_cameras
        eye = (radius * np.cos(a), radius * np.sin(a), height)
        base = preset(preset_name, camera_id=f"cam{i}")
        cams.append(base.with_pose(look_at(eye, (0.0, 0.0, 1.0), (0.0, 0.0, 1.0))))
    return SceneConfig(
        cameras=tuple(cams),
        actor=ActorSpec(motion=motion),
        frame_rate=frame_rate,
        duration=duration,
        master_seed=master_seed,
        detector=dict(detector or {}),
    )


@dataclass
class TrackingRun:
    metrics: TrackingMetrics
    truth: list
    estimates: dict  # camera id -> list of CameraSkeletonEstimate
    fused: list
    visibility: np.ndarray  # (frames, cameras, joints) geometric visibility
    camera_ids: tuple
    frame_rate: float
    mode: str = "depth_lookup"
    log_rows: list = field(default_factory=list, repr=False)


def _detector_settings(scene, mode, sigma_px, p_miss):
    d = dict(scene.detector)
    out = {
        "sigma_px": float(sigma_px if sigma_px is not None else d.get("sigma_px", DEFAULT_SIGMA_PX)),
        "p_miss": float(p_miss if p_miss is not None else d.get("p_miss", DEFAULT_P_MISS)),
        "mode": mode if mode is not None else d.get("mode", "depth_lookup"),
        "min_confidence": float(d.get("min_confidence", 0.0)),
        "confidence": float(d.get("confidence", DEFAULT_CONFIDENCE)),
    }
    if out["mode"] not in LIFT_MODES:
        raise ValueError(f"unknown lift mode {out['mode']!r}")
    return out


def _process_frames(args):
    scene, settings, frames, poses = args
    out = []
    for f, pose in zip(frames, poses):
        caps = build_capsules(pose, scene.capsule_radii)
        ests, vis = [], []
        for cam in scene.cameras:
            rng_d = derive_rng(scene.master_seed, "detect:" + cam.id, f)
            rng_l = derive_rng(scene.master_seed, "lift:" + cam.id, f)
            vis.append(visible_mask(cam, pose, caps))
            det = simulate_detection(cam, pose, caps, settings["sigma_px"], settings["p_miss"], rng_d, f,
                                     settings["confidence"])
            ests.append(lift_to_3d(det, cam, caps, rng_l, settings["mode"], truth=pose))
        fused = fuse_average(ests, settings["min_confidence"])
        out.append((ests, fused, np.array(vis)))
    return out


def _log_rows(frame, t, source, positions, present, conf, truth):
    rows = []
    for j, name in enumerate(CANONICAL_JOINTS):
        p = positions[j] if present[j] else (None, None, None)
        g = truth.positions[j] if truth.present[j] else (None, None, None)
        rows.append((frame, t, source, name, int(present[j]), *p, *g, float(conf[j])))
    return rows


def run_tracking_experiment(scene, mode=None, sigma_px=None, p_miss=None, n_jobs=1, log=True):
    """Detect, lift and fuse every frame of ``scene``; evaluate against the truth.

    Per-frame streams are keyed by (camera id, frame), so results do not
    depend on ``n_jobs`` or on camera order.
    """
    settings = _detector_settings(scene, mode, sigma_px, p_miss)
    seq = actor_sequence(scene.actor, scene.frame_rate, scene.duration)
    poses = list(seq)
    frames = list(range(len(poses)))
    if n_jobs is not None and n_jobs > 1 and len(frames) > 1:
        chunks = np.array_split(np.arange(len(frames)), n_jobs)
        jobs = [(scene, settings, [frames[i] for i in c], [poses[i] for i in c]) for c in chunks if len(c)]
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = [r for part in pool.map(_process_frames, jobs) for r in part]
    else:
        results = _process_frames((scene, settings, frames, poses))
    cam_ids = tuple(c.id for c in scene.cameras)
    per_cam = {cid: [r[0][i] for r in results] for i, cid in enumerate(cam_ids)}
    fused = [r[1] for r in results]
    vis = np.array([r[2] for r in results]) if results else np.zeros((0, len(cam_ids), N_JOINTS), dtype=bool)
    sources = dict(per_cam)
    sources[FUSED] = fused
    metrics = evaluate_tracking(sources, poses)
    rows = []
    if log:
        for f, pose in enumerate(poses):
            t = f / scene.frame_rate
            for cid in cam_ids:
                e = per_cam[cid][f]
                rows += _log_rows(f, t, cid, e.positions, e.present, e.confidence, pose)
            rows += _log_rows(f, t, FUSED, fused[f].positions, fused[f].present, fused[f].confidence, pose)
    return TrackingRun(metrics, poses, per_cam, fused, vis, cam_ids, scene.frame_rate, settings["mode"], rows)
