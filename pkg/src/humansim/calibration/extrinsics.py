"""Multi-camera extrinsic estimation from synchronised prop observations.

Closed-form stage: per-frame PnP, pairwise relative poses averaged over
frames, world anchoring of one reference camera, breadth-first propagation
over the covisibility graph. :func:`refine_global` then runs a small bundle
adjustment over all camera and prop poses.
"""

import itertools
import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..camera import in_image, project_points
from ..exceptions import AnchorNotObservedError, DegenerateConfigurationError, DisconnectedGraphError, TooFewPointsError
from ..geometry import RigidTransform, chordal_mean_rotation, compose, exp_so3, geodesic_angle, invert, transform_point
from .pnp import solve_pnp, solve_pnp_candidates

log = logging.getLogger(__name__)

__all__ = [
    "FiducialObservation",
    "CalibrationResult",
    "observe_fiducials",
    "estimate_extrinsics",
    "refine_global",
    "ExtrinsicCalibrator",
    "average_transforms",
    "robust_average",
    "consensus_average",
    "consensus_modes",
    "MAX_INCIDENCE_DEG",
]

MAX_INCIDENCE_DEG = 75.0
CONSENSUS_CAP = 0.5  # rad
MAX_HYPOTHESES = 64


@dataclass(frozen=True)
class FiducialObservation:
    frame_id: int
    camera_id: str
    point_id: int
    pixel: tuple
    target: str = "prop"  # "prop" or "anchor"

    def as_record(self):
        return {
            "frame_id": self.frame_id,
            "camera_id": self.camera_id,
            "point_id": self.point_id,
            "u": float(self.pixel[0]),
            "v": float(self.pixel[1]),
            "target": self.target,
        }


@dataclass
class CalibrationResult:
    world_from_camera: dict
    per_camera_rms: dict
    frames_used: int
    reference_camera: str = None
    status: str = "initial"
    total_cost: float = float("nan")
    world_from_prop: dict = field(default_factory=dict, repr=False)


def observe_fiducials(cam, prop, world_from_prop, rng=None, max_incidence_deg=MAX_INCIDENCE_DEG):
    """Simulated fiducial detections ``[(point_id, (u, v)), ...]`` for one camera.

    Two normal variates are drawn per fiducial regardless of visibility so
    that the stream position never depends on the geometry.
    """
    pts = transform_point(world_from_prop, prop.fiducial_points)
    uv, z = project_points(cam, pts)
    n = len(pts)
    noise = rng.standard_normal((n, 2)) if rng is not None else np.zeros((n, 2))
    keep = z > 0
    if prop.planar:
        normal = world_from_prop.rotation.matrix @ prop.normal
        to_cam = cam.center - pts
        to_cam /= np.linalg.norm(to_cam, axis=1)[:, None]
        keep &= to_cam @ normal > np.cos(np.radians(max_incidence_deg))
    out = []
    sigma = cam.pixel_noise_sigma
    for i in range(n):
        if keep[i] and in_image(cam.intrinsics, uv[i, 0], uv[i, 1]):
            out.append((i, (float(uv[i, 0] + sigma * noise[i, 0]), float(uv[i, 1] + sigma * noise[i, 1]))))
    return out


def average_transforms(transforms):
    """Chordal-mean rotation with arithmetic-mean translation."""
    transforms = list(transforms)
    r = chordal_mean_rotation([t.rotation for t in transforms])
    t = np.mean([t.translation for t in transforms], axis=0)
    return RigidTransform(r, t)


def robust_average(transforms, k=3.0):
    """:func:`average_transforms` after dropping samples far from the first mean.

    A sample is dropped when its rotation or translation deviation exceeds
    ``k`` times the median deviation; this removes the mirrored solutions
    that planar PnP occasionally converges to.
    """
    transforms = list(transforms)
    mean = average_transforms(transforms)
    if len(transforms) < 3:
        return mean
    rot = np.array([geodesic_angle(mean.rotation, t.rotation) for t in transforms])
    trans = np.array([np.linalg.norm(t.translation - mean.translation) for t in transforms])
    keep = (rot <= k * np.median(rot) + 1e-12) & (trans <= k * np.median(trans) + 1e-12)
    if keep.all() or not keep.any():
        return mean
    return average_transforms([t for t, m in zip(transforms, keep) if m])


def _group(observations):
    """``{(target, camera_id, frame_id): (point_ids, pixels)}`` in canonical order."""
    groups = defaultdict(list)
    for o in observations:
        groups[(o.target, o.camera_id, o.frame_id)].append((o.point_id, o.pixel))
    out = {}
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2])):
        items = sorted(groups[key], key=lambda x: x[0])
        out[key] = (np.array([i for i, _ in items], dtype=int), np.array([p for _, p in items], dtype=float))
    return out


def _try_pnp(pts, pix, intr):
    try:
        return solve_pnp(pts, pix, intr)
    except (TooFewPointsError, DegenerateConfigurationError):
        return None


def _try_candidates(pts, pix, intr):
    """All PnP minima, best first; a distant planar prop can fit either one."""
    try:
        return [s.camera_from_prop for s in solve_pnp_candidates(pts, pix, intr)]
    except (TooFewPointsError, DegenerateConfigurationError):
        return []


def _quat_angles(qa, qb):
    return 2.0 * np.arccos(np.clip(np.abs(qa @ qb.T), 0.0, 1.0))


def consensus_modes(candidates_per_frame, cap=CONSENSUS_CAP, max_modes=2):
    """Averaged relative poses for the best-supported rotation clusters.

    Each frame offers one or more candidates (mirrored planar solutions).
    Every candidate is scored by its truncated rotation distance to the
    nearest candidate of each frame. The best-scoring one seeds the first
    mode; a second mode is seeded by the best candidate at least ``cap``
    away from the first that agrees with at least one other frame. Each
    mode averages, per frame, the candidate closest to its seed.
    """
    frames = [list(c) for c in candidates_per_frame if len(c)]
    if all(len(c) == 1 for c in frames):
        return [robust_average([c[0] for c in frames])]
    flat = [t for c in frames for t in c]
    owner = np.repeat(np.arange(len(frames)), [len(c) for c in frames])
    quats = np.array([t.rotation.quat for t in flat])
    ang = np.minimum(_quat_angles(quats, quats), cap)
    per_frame = np.column_stack([ang[:, owner == f].min(axis=1) for f in range(len(frames))])
    score = per_frame.sum(axis=1)
    agree = (per_frame < cap).sum(axis=1)
    order = np.lexsort((np.arange(len(flat)), score))
    seeds = [int(order[0])]
    for c in order[1:]:
        if len(seeds) >= max_modes:
            break
        if agree[c] >= 2 and all(ang[c, s_] >= cap for s_ in seeds):
            seeds.append(int(c))
    modes = []
    for seed in seeds:
        chosen = []
        for f in range(len(frames)):
            idx = np.flatnonzero(owner == f)
            chosen.append(flat[idx[np.argmin(ang[seed, idx])]])
        modes.append(robust_average(chosen))
    return modes


def consensus_average(candidates_per_frame, cap=CONSENSUS_CAP):
    """Best mode of :func:`consensus_modes`."""
    return consensus_modes(candidates_per_frame, cap, max_modes=1)[0]


def _anchor_poses(groups, anchor, cameras):
    """Per camera: camera_from_world from all anchor detections stacked, with point count."""
    world_pts = anchor.fiducial_points
    per_cam = defaultdict(lambda: ([], []))
    for (target, cam_id, _), (ids, pix) in groups.items():
        if target == "anchor" and cam_id in cameras:
            per_cam[cam_id][0].append(world_pts[ids])
            per_cam[cam_id][1].append(pix)
    out = {}
    for cam_id in sorted(per_cam):
        pts = np.concatenate(per_cam[cam_id][0])
        pix = np.concatenate(per_cam[cam_id][1])
        sol = _try_pnp(pts, pix, cameras[cam_id])
        if sol is not None:
            out[cam_id] = (sol.camera_from_prop, len(pts))
    return out


def estimate_extrinsics(observations, prop, anchor, cameras):
    """Closed-form world-from-camera poses.

    ``cameras`` maps camera id to :class:`CameraIntrinsics`. The reference
    camera is the one with the most anchor detections (ties broken by id).
    """
    groups = _group(observations)
    cam_ids = sorted(cameras)

    # per (frame, camera) prop pose candidates, best first
    cam_from_prop = defaultdict(dict)  # frame -> {camera: [RigidTransform, ...]}
    for (target, cam_id, frame), (ids, pix) in groups.items():
        if target != "prop" or cam_id not in cameras or len(ids) < 4:
            continue
        sols = _try_candidates(prop.fiducial_points[ids], pix, cameras[cam_id])
        if sols:
            cam_from_prop[frame][cam_id] = sols

    anchors = _anchor_poses(groups, anchor, cameras)
    if not anchors:
        raise AnchorNotObservedError("no camera observed the world anchor with at least 4 points")
    reference = sorted(anchors, key=lambda c: (-anchors[c][1], c))[0]

    # pairwise relative poses camera_i_from_camera_j, i < j
    pairs = defaultdict(list)
    frames_used = set()
    for frame in sorted(cam_from_prop):
        sols = cam_from_prop[frame]
        ids = sorted(sols)
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                i, j = ids[a], ids[b]
                pairs[(i, j)].append([compose(a_, invert(b_)) for a_ in sols[i] for b_ in sols[j]])
                frames_used.add(frame)
    modes = {key: consensus_modes(v) for key, v in pairs.items()}
    support = {key: len(v) for key, v in pairs.items()}

    # spanning tree grown from the reference, always through the placed/unplaced
    # edge with the most shared frames (ties: smaller camera ids)
    placed = {reference}
    tree = []
    while True:
        best = None
        for (i, j), n in support.items():
            if (i in placed) == (j in placed):
                continue
            key = (-n, i, j)
            if best is None or key < best[0]:
                best = (key, i, j)
        if best is None:
            break
        _, i, j = best
        tree.append((i, j))
        placed.update((i, j))
    missing = [c for c in cam_ids if c not in placed]
    if missing:
        raise DisconnectedGraphError(missing)

    root = invert(anchors[reference][0])
    choices = [range(len(modes[e])) for e in tree]
    n_hyp = int(np.prod([len(c) for c in choices])) if choices else 1
    if n_hyp > MAX_HYPOTHESES:
        choices = [range(1) for _ in tree]
    best = None
    for combo in itertools.product(*choices):
        world_from_camera = {reference: root}
        for (i, j), k in zip(tree, combo):
            rel = modes[(i, j)][k]  # camera_i_from_camera_j
            if i in world_from_camera:
                world_from_camera[j] = compose(world_from_camera[i], rel)
            else:
                world_from_camera[i] = compose(world_from_camera[j], invert(rel))
        world_from_camera = {c: world_from_camera[c] for c in cam_ids}
        world_from_prop = _initial_prop_poses(world_from_camera, cam_from_prop, groups, prop, cameras)
        problem = _Problem.build(groups, prop, anchor, cameras, world_from_camera, world_from_prop)
        cost = problem.cost()
        if best is None or cost < best[0]:
            best = (cost, world_from_camera, world_from_prop, problem)
    cost, world_from_camera, world_from_prop, problem = best

    return CalibrationResult(
        world_from_camera=world_from_camera,
        per_camera_rms=problem.per_camera_rms(),
        frames_used=len(frames_used),
        reference_camera=reference,
        total_cost=cost,
        world_from_prop=world_from_prop,
    )


def _initial_prop_poses(world_from_camera, cam_from_prop, groups, prop, cameras):
    """Per frame, the candidate world pose with the lowest reprojection cost over all cameras."""
    out = {}
    for frame in sorted(cam_from_prop):
        cams = sorted(cam_from_prop[frame])
        cands = [compose(world_from_camera[c], t) for c in cams for t in cam_from_prop[frame][c]]
        r = np.array([t.rotation.matrix for t in cands])
        t = np.array([t.translation for t in cands])
        costs = np.zeros(len(cands))
        for c in cams:
            ids, pix = groups[("prop", c, frame)]
            cfw = invert(world_from_camera[c])
            rc, tc = cfw.rotation.matrix, cfw.translation
            # (candidates, points, 3) in camera c
            pw = np.einsum("kij,nj->kni", r, prop.fiducial_points[ids]) + t[:, None, :]
            pc = pw @ rc.T + tc
            z = pc[..., 2]
            intr = cameras[c]
            with np.errstate(divide="ignore", invalid="ignore"):
                u = intr.fx * pc[..., 0] / z + intr.cx - pix[:, 0]
                v = intr.fy * pc[..., 1] / z + intr.cy - pix[:, 1]
            cost = np.sum(u**2 + v**2, axis=1)
            costs += np.where(np.all(z > 0, axis=1), cost, np.inf)
        out[frame] = cands[int(np.argmin(costs))]
    return out


class _Problem:
    """Bundle-adjustment problem over camera_from_world and world_from_prop poses."""

    def __init__(self, cam_ids, frames, cam_idx, frame_idx, points, pixels, intr, r_c, t_c, r_f, t_f):
        self.cam_ids = cam_ids
        self.frames = frames
        self.cam_idx = cam_idx
        self.frame_idx = frame_idx  # -1 for anchor observations (points already in world)
        self.points = points
        self.pixels = pixels
        self.fx, self.fy, self.cx, self.cy = intr
        self.r_c, self.t_c, self.r_f, self.t_f = r_c, t_c, r_f, t_f

    @classmethod
    def build(cls, groups, prop, anchor, cameras, world_from_camera, world_from_prop):
        cam_ids = sorted(world_from_camera)
        frames = sorted(world_from_prop)
        cpos = {c: i for i, c in enumerate(cam_ids)}
        fpos = {f: i for i, f in enumerate(frames)}
        ci, fi, pts, pix = [], [], [], []
        world_anchor = anchor.fiducial_points
        for (target, cam_id, frame), (ids, px) in groups.items():
            if cam_id not in cpos:
                continue
            if target == "anchor":
                f, local = -1, world_anchor[ids]
            elif frame in fpos:
                f, local = fpos[frame], prop.fiducial_points[ids]
            else:
                continue
            ci += [cpos[cam_id]] * len(ids)
            fi += [f] * len(ids)
            pts.append(local)
            pix.append(px)
        intr = np.array([[cameras[c].fx, cameras[c].fy, cameras[c].cx, cameras[c].cy] for c in cam_ids]).T
        cam_from_world = [invert(world_from_camera[c]) for c in cam_ids]
        return cls(
            cam_ids,
            frames,
            np.array(ci, dtype=int),
            np.array(fi, dtype=int),
            np.concatenate(pts) if pts else np.zeros((0, 3)),
            np.concatenate(pix) if pix else np.zeros((0, 2)),
            intr,
            np.array([t.rotation.matrix for t in cam_from_world]).reshape(-1, 3, 3),
            np.array([t.translation for t in cam_from_world]).reshape(-1, 3),
            np.array([world_from_prop[f].rotation.matrix for f in frames]).reshape(-1, 3, 3),
            np.array([world_from_prop[f].translation for f in frames]).reshape(-1, 3),
        )

    def _world_points(self, r_f, t_f):
        xw = self.points.copy()
        m = self.frame_idx >= 0
        f = self.frame_idx[m]
        xw[m] = np.einsum("nij,nj->ni", r_f[f], self.points[m]) + t_f[f]
        return xw

    def residuals(self, state=None):
        r_c, t_c, r_f, t_f = state if state is not None else (self.r_c, self.t_c, self.r_f, self.t_f)
        xw = self._world_points(r_f, t_f)
        c = self.cam_idx
        pc = np.einsum("nij,nj->ni", r_c[c], xw) + t_c[c]
        z = pc[:, 2]
        uv = np.column_stack([self.fx[c] * pc[:, 0] / z + self.cx[c], self.fy[c] * pc[:, 1] / z + self.cy[c]])
        return uv - self.pixels, pc, xw

    def cost(self, state=None):
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            res, pc, _ = self.residuals(state)
        if np.any(pc[:, 2] <= 0):
            return np.inf
        return float(np.sum(res**2))

    def per_camera_rms(self):
        res, _, _ = self.residuals()
        out = {}
        for i, c in enumerate(self.cam_ids):
            m = self.cam_idx == i
            out[c] = float(np.sqrt(np.mean(res[m] ** 2))) if np.any(m) else float("nan")
        return out

    def jacobian(self):
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            return self._jacobian()

    def _jacobian(self):
        res, pc, xw = self.residuals()
        n = len(pc)
        nc, nf = len(self.cam_ids), len(self.frames)
        c = self.cam_idx
        x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
        jp = np.zeros((n, 2, 3))
        jp[:, 0, 0] = self.fx[c] / z
        jp[:, 0, 2] = -self.fx[c] * x / z**2
        jp[:, 1, 1] = self.fy[c] / z
        jp[:, 1, 2] = -self.fy[c] * y / z**2
        d_cam = np.zeros((n, 3, 6))
        d_cam[:, :, :3] = -_skew_batch(pc)
        d_cam[:, :, 3:] = np.eye(3)
        j_cam = np.einsum("nij,njk->nik", jp, d_cam)
        jac = np.zeros((2 * n, 6 * (nc + nf)))
        rows = np.arange(n)
        for k in range(6):
            jac[2 * rows, 6 * c + k] = j_cam[:, 0, k]
            jac[2 * rows + 1, 6 * c + k] = j_cam[:, 1, k]
        m = self.frame_idx >= 0
        if np.any(m):
            d_frame = np.zeros((n, 3, 6))
            d_frame[:, :, :3] = -_skew_batch(xw)
            d_frame[:, :, 3:] = np.eye(3)
            j_frame = np.einsum("nij,njk,nkl->nil", jp, self.r_c[c], d_frame)
            f = self.frame_idx
            for k in range(6):
                cols = 6 * (nc + f[m]) + k
                jac[2 * rows[m], cols] = j_frame[m, 0, k]
                jac[2 * rows[m] + 1, cols] = j_frame[m, 1, k]
        return jac, res.ravel()

    def updated(self, delta):
        nc = len(self.cam_ids)
        d = delta.reshape(-1, 6)
        r_c, t_c = _apply(self.r_c, self.t_c, d[:nc])
        r_f, t_f = _apply(self.r_f, self.t_f, d[nc:])
        return r_c, t_c, r_f, t_f

    def set_state(self, state):
        self.r_c, self.t_c, self.r_f, self.t_f = state


def _skew_batch(v):
    out = np.zeros((len(v), 3, 3))
    out[:, 0, 1], out[:, 0, 2] = -v[:, 2], v[:, 1]
    out[:, 1, 0], out[:, 1, 2] = v[:, 2], -v[:, 0]
    out[:, 2, 0], out[:, 2, 1] = -v[:, 1], v[:, 0]
    return out


def _apply(r, t, d):
    r_new = np.empty_like(r)
    t_new = np.empty_like(t)
    for i in range(len(r)):
        dr = exp_so3(d[i, :3])
        r_new[i] = dr @ r[i]
        t_new[i] = dr @ t[i] + d[i, 3:]
    return r_new, t_new


def refine_global(initial, observations, prop, anchor, cameras, max_iter=100, rel_tol=1e-12,
                  lambda_init=1e-3, lambda_max=1e12):
    """Levenberg-Marquardt over all camera poses and per-frame prop poses.

    The anchor detections tie the cameras that see it to the world frame,
    which fixes the gauge. The returned cost never exceeds the initial cost;
    if no step can be accepted the initial result is returned with
    ``status == "diverged"``.
    """
    groups = _group(observations)
    problem = _Problem.build(groups, prop, anchor, cameras, initial.world_from_camera, initial.world_from_prop)
    cost = problem.cost()
    initial_cost = cost
    lam = lambda_init
    status = "refined"
    accepted_any = False
    for _ in range(max_iter):
        if cost == 0.0:
            break
        jac, res = problem.jacobian()
        a = jac.T @ jac
        g = jac.T @ res
        diag = np.diag(a).copy()
        diag[diag <= 0] = 1.0
        improved = False
        while lam <= lambda_max:
            try:
                delta = -np.linalg.solve(a + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            state = problem.updated(delta)
            new_cost = problem.cost(state)
            if np.isfinite(new_cost) and new_cost <= cost:
                improved = True
                break
            lam *= 10.0
        if not improved:
            if not accepted_any:
                status = "diverged"
                log.warning("bundle refinement could not reduce the cost; keeping the initial estimate")
            break
        accepted_any = True
        problem.set_state(state)
        rel = (cost - new_cost) / cost if cost > 0 else 0.0
        cost = new_cost
        lam = max(lam / 10.0, 1e-12)
        if rel < rel_tol:
            break

    if status == "diverged":
        out = CalibrationResult(dict(initial.world_from_camera), dict(initial.per_camera_rms), initial.frames_used,
                                initial.reference_camera, "diverged", initial_cost, dict(initial.world_from_prop))
        return out
    world_from_camera = {
        c: invert(RigidTransform.from_rt(problem.r_c[i], problem.t_c[i])) for i, c in enumerate(problem.cam_ids)
    }
    world_from_prop = {
        f: RigidTransform.from_rt(problem.r_f[i], problem.t_f[i]) for i, f in enumerate(problem.frames)
    }
    return CalibrationResult(world_from_camera, problem.per_camera_rms(), initial.frames_used,
                             initial.reference_camera, status, cost, world_from_prop)


class ExtrinsicCalibrator(BaseEstimator):
    """Estimator interface to the calibration pipeline.

    ``fit(observations)`` estimates ``world_from_camera_``; ``transform``
    maps camera-frame points of a given camera into the world frame.
    """

    def __init__(self, prop=None, anchor=None, intrinsics=None, refine=True):
        self.prop = prop
        self.anchor = anchor
        self.intrinsics = intrinsics
        self.refine = refine

    def fit(self, X, y=None):
        if self.prop is None or self.anchor is None or not self.intrinsics:
            raise ValueError("ExtrinsicCalibrator requires prop, anchor and intrinsics")
        X = list(X)
        result = estimate_extrinsics(X, self.prop, self.anchor, self.intrinsics)
        if self.refine:
            result = refine_global(result, X, self.prop, self.anchor, self.intrinsics)
        self.result_ = result
        self.world_from_camera_ = result.world_from_camera
        self.reference_camera_ = result.reference_camera
        return self

    def transform(self, X, camera_id):
        check_is_fitted(self, "world_from_camera_")
        return transform_point(self.world_from_camera_[camera_id], np.asarray(X, dtype=float))

    def score(self, X, y=None):
        """Negative reprojection RMS (pixels) of ``X`` under the fitted poses."""
        check_is_fitted(self, "world_from_camera_")
        groups = _group(list(X))
        r = self.result_
        problem = _Problem.build(groups, self.prop, self.anchor, self.intrinsics, r.world_from_camera,
                                 r.world_from_prop)
        res, _, _ = problem.residuals()
        return -float(np.sqrt(np.mean(res**2))) if len(res) else 0.0
