"""Geometric world model: body capsules, calibration props, world anchor,
ray-cast visibility and synthetic depth."""

from dataclasses import dataclass, field

import numpy as np

from ._validation import as_points, as_vec3
from .camera import CameraModel, apply_depth_noise, in_image, pixel_ray, project_points
from .exceptions import GeometryError
from .geometry import RigidTransform, transform_point
from .motion.skeleton import JOINT_INDEX, SkeletonPose

__all__ = [
    "Capsule",
    "BONES",
    "DEFAULT_CAPSULE_RADII",
    "build_capsules",
    "ray_capsule",
    "ray_capsules",
    "joint_visible",
    "visible_mask",
    "depth_at_pixel",
    "render_depth",
    "true_depths",
    "actor_sequence",
    "CalibrationProp",
    "WorldAnchor",
    "PROPS",
    "get_prop",
    "default_anchor",
    "ActorSpec",
    "SceneConfig",
]

DEFAULT_CAPSULE_RADII = {
    "head": 0.11,
    "torso": 0.15,
    "shoulder": 0.06,
    "upper_arm": 0.05,
    "forearm": 0.045,
    "thigh": 0.08,
    "shin": 0.06,
    "foot": 0.06,
}

# (bone, endpoint a, endpoint b, radius key, joints that sit inside this capsule)
BONES = (
    ("head", "Neck", "Nose", "head", ("REye", "LEye", "REar", "LEar")),
    ("torso", "Neck", "MidHip", "torso", ("RHip", "LHip", "RShoulder", "LShoulder")),
    ("shoulders", "RShoulder", "LShoulder", "shoulder", ("Neck",)),
    ("r_upper_arm", "RShoulder", "RElbow", "upper_arm", ()),
    ("l_upper_arm", "LShoulder", "LElbow", "upper_arm", ()),
    ("r_forearm", "RElbow", "RWrist", "forearm", ("RHand",)),
    ("l_forearm", "LElbow", "LWrist", "forearm", ("LHand",)),
    ("r_thigh", "RHip", "RKnee", "thigh", ()),
    ("l_thigh", "LHip", "LKnee", "thigh", ()),
    ("r_shin", "RKnee", "RAnkle", "shin", ()),
    ("l_shin", "LKnee", "LAnkle", "shin", ()),
    ("r_foot", "RHeel", "RBigToe", "foot", ("RAnkle", "RSmallToe")),
    ("l_foot", "LHeel", "LBigToe", "foot", ("LAnkle", "LSmallToe")),
)


@dataclass(frozen=True, eq=False)
class Capsule:
    endpoint_a: np.ndarray
    endpoint_b: np.ndarray
    radius: float
    owner_joints: frozenset = frozenset()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "endpoint_a", as_vec3(self.endpoint_a, "endpoint_a"))
        object.__setattr__(self, "endpoint_b", as_vec3(self.endpoint_b, "endpoint_b"))
        object.__setattr__(self, "owner_joints", frozenset(self.owner_joints))
        if not self.radius > 0:
            raise GeometryError(f"capsule radius must be positive, got {self.radius}")

    def distance(self, p):
        """Distance from point(s) ``p`` to the capsule axis segment."""
        return _segment_distance(np.asarray(p, dtype=float), self.endpoint_a, self.endpoint_b)


def _segment_distance(p, a, b):
    ab = b - a
    l2 = float(ab @ ab)
    if l2 == 0.0:
        return np.linalg.norm(p - a, axis=-1)
    s = np.clip(((p - a) @ ab) / l2, 0.0, 1.0)
    closest = a + np.multiply.outer(s, ab)
    return np.linalg.norm(p - closest, axis=-1)


def build_capsules(pose, radii=None):
    """One capsule per configured bone whose two endpoints are present."""
    table = dict(DEFAULT_CAPSULE_RADII)
    if radii:
        unknown = set(radii) - set(table)
        if unknown:
            raise ValueError(f"unknown capsule radius keys: {sorted(unknown)}")
        table.update(radii)
    caps = []
    for bone, ja, jb, key, extra in BONES:
        ia, ib = JOINT_INDEX[ja], JOINT_INDEX[jb]
        if not (pose.present[ia] and pose.present[ib]):
            continue
        caps.append(
            Capsule(pose.positions[ia], pose.positions[ib], table[key], frozenset((ja, jb) + extra), bone)
        )
    return caps


def _pack(capsules):
    a = np.array([c.endpoint_a for c in capsules]).reshape(-1, 3)
    b = np.array([c.endpoint_b for c in capsules]).reshape(-1, 3)
    r = np.array([c.radius for c in capsules], dtype=float)
    return a, b, r


# tolerance on the axis parameter where the cylinder body meets the caps
_SEAM = 1e-12


def _stable_roots(qa, qb, qc):
    """Roots of ``qa t^2 + 2 qb t + qc`` (NaN where none); ``qa`` may be zero."""
    disc = qb * qb - qa * qc
    ok = (disc >= 0) & (qa > 0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    q = -(qb + np.where(qb >= 0, sq, -sq))
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(ok, q / np.where(ok, qa, 1.0), np.nan)
        t2 = np.where(ok & (q != 0), qc / np.where(q != 0, q, 1.0), t1)
    return t1, t2


def ray_capsules(origins, dirs, a, b, r):
    """Nearest surface crossing for every (ray, capsule) pair.

    ``origins``/``dirs`` are ``(n, 3)``; ``a``/``b``/``r`` describe ``m``
    capsules. Returns ``(n, m)`` distances, ``inf`` for misses. For an origin
    inside a capsule the exit distance is returned.
    """
    ab = b - a
    l2 = np.einsum("mk,mk->m", ab, ab)
    degenerate = (l2 == 0.0)[None, :]
    l2s = np.where(l2 == 0.0, 1.0, l2)[None, :]
    ao = origins[:, None, :] - a[None]
    rr = (r * r)[None, :]

    # axis parameter along the ray is affine in t: s(t) = oab + t * dab
    dab = (dirs @ ab.T) / l2s
    oab = np.einsum("nmk,mk->nm", ao, ab) / l2s
    d_perp = dirs[:, None, :] - dab[..., None] * ab[None]
    o_perp = ao - oab[..., None] * ab[None]
    qa = np.einsum("nmk,nmk->nm", d_perp, d_perp)
    qb = np.einsum("nmk,nmk->nm", o_perp, d_perp)
    qc = np.einsum("nmk,nmk->nm", o_perp, o_perp) - rr
    qa = np.where(qa < 1e-15, 0.0, qa)

    cands = []
    with np.errstate(invalid="ignore"):
        # cylinder body
        for t in _stable_roots(qa, qb, qc):
            s = oab + t * dab
            cands.append(np.where((s >= -_SEAM) & (s <= 1 + _SEAM) & ~degenerate, t, np.nan))
        # end caps
        one = np.ones_like(qb)
        ad = np.einsum("nmk,nk->nm", ao, dirs)
        aa = np.einsum("nmk,nmk->nm", ao, ao)
        for side in (0, 1):
            if side == 0:
                hb, hc = ad, aa - rr
            else:
                # bo = ao - ab
                hb = ad - dab * l2s
                hc = aa - 2.0 * oab * l2s + l2[None, :] - rr
            for t in _stable_roots(one, hb, hc):
                s = oab + t * dab
                if side == 0:
                    valid = (s <= _SEAM) | degenerate
                else:
                    valid = (s >= 1 - _SEAM) & ~degenerate
                cands.append(np.where(valid, t, np.nan))
        c = np.stack(cands, axis=-1)
        c = np.where(c >= 0, c, np.nan)

    inside = _inside(origins, a, b, r)
    missing = np.isnan(c)
    near = np.min(np.where(missing, np.inf, c), axis=-1)
    far = np.max(np.where(missing, -np.inf, c), axis=-1)
    out = np.where(inside, far, near)
    return np.where(np.isfinite(out), out, np.inf)


def _inside(origins, a, b, r):
    ab = b - a
    l2 = np.sum(ab * ab, axis=-1)
    l2s = np.where(l2 == 0, 1.0, l2)
    ao = origins[:, None, :] - a[None]
    s = np.clip(np.sum(ao * ab[None], axis=-1) / l2s, 0.0, 1.0)
    closest = a[None] + s[..., None] * ab[None]
    dist = np.linalg.norm(origins[:, None, :] - closest, axis=-1)
    return dist <= r[None, :]


def ray_capsule(origin, direction, capsule):
    """Distance along a unit ray to the capsule surface, or ``None`` on a miss."""
    origin = as_vec3(origin, "origin")
    direction = as_vec3(direction, "direction")
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise GeometryError("ray direction must be unit length")
    a, b, r = _pack([capsule])
    t = ray_capsules(origin[None], direction[None], a, b, r)[0, 0]
    return None if not np.isfinite(t) else float(t)


def joint_visible(cam, joint, capsules, exclude=(), margin=None):
    """Line-of-sight test from the camera center to a joint position.

    Capsules owning any joint named in ``exclude`` are ignored. ``margin``
    defaults to half the largest radius among the ignored capsules.
    """
    if isinstance(exclude, str):
        exclude = (exclude,)
    exclude = frozenset(exclude)
    joint = as_vec3(joint, "joint")
    uv, z = project_points(cam, joint[None])
    if not z[0] > 0 or not in_image(cam.intrinsics, uv[0, 0], uv[0, 1]):
        return False
    skipped = [c for c in capsules if c.owner_joints & exclude]
    blockers = [c for c in capsules if not (c.owner_joints & exclude)]
    if margin is None:
        margin = 0.5 * max((c.radius for c in skipped), default=0.0)
    if not blockers:
        return True
    origin = cam.center
    v = joint - origin
    dist = float(np.linalg.norm(v))
    a, b, r = _pack(blockers)
    t = ray_capsules(origin[None], (v / dist)[None], a, b, r)[0]
    return bool(np.all(t >= dist - margin))


def visible_mask(cam, pose, capsules, margin=None, subset=None):
    """Vectorised ``joint_visible`` for every present canonical joint of ``pose``.

    ``subset`` (boolean mask over the canonical joints) limits the test to
    those joints; the rest are reported as not visible.
    """
    from .motion.skeleton import CANONICAL_JOINTS

    mask = np.zeros(len(CANONICAL_JOINTS), dtype=bool)
    present = pose.present if subset is None else pose.present & np.asarray(subset, dtype=bool)
    idx = np.flatnonzero(present)
    if len(idx) == 0:
        return mask
    pts = pose.positions[idx]
    uv, z = project_points(cam, pts)
    k = cam.intrinsics
    with np.errstate(invalid="ignore"):
        in_view = (z > 0) & (uv[:, 0] >= 0) & (uv[:, 0] < k.width) & (uv[:, 1] >= 0) & (uv[:, 1] < k.height)
    if not capsules:
        mask[idx] = in_view
        return mask
    a, b, r = _pack(capsules)
    origin = cam.center
    v = pts - origin
    dist = np.linalg.norm(v, axis=1)
    t = ray_capsules(np.broadcast_to(origin, pts.shape).copy(), v / dist[:, None], a, b, r)
    names = [CANONICAL_JOINTS[i] for i in idx]
    owned = np.array([[n in c.owner_joints for c in capsules] for n in names])
    if margin is None:
        m = 0.5 * np.max(np.where(owned, r[None, :], 0.0), axis=1)
    else:
        m = np.full(len(idx), float(margin))
    clear = np.all(owned | (t >= (dist - m)[:, None]), axis=1)
    mask[idx] = in_view & clear
    return mask


def _pixel_depth_true(cam, u, v, capsules):
    if not capsules:
        return None
    d = pixel_ray(cam, u, v)
    a, b, r = _pack(capsules)
    t = ray_capsules(cam.center[None], d[None], a, b, r)[0]
    tmin = float(np.min(t))
    if not np.isfinite(tmin):
        return None
    # range along the ray -> depth along the optical axis
    axis = cam.world_from_camera.rotation.matrix[:, 2]
    return tmin * float(d @ axis)


def depth_at_pixel(cam, u, v, capsules, rng=None):
    """Noisy depth (optical-axis z) of the first capsule hit through pixel ``(u, v)``.

    Returns ``None`` for background or beyond the sensor range.
    """
    if not in_image(cam.intrinsics, u, v):
        raise GeometryError(f"pixel ({u}, {v}) outside the image")
    z = _pixel_depth_true(cam, u, v, capsules)
    if z is None or z <= 0:
        if rng is not None:
            rng.standard_normal()  # keep stream alignment independent of hits
        return None
    return apply_depth_noise(cam.depth_noise, z, rng)


def true_depths(cam, uv, capsules):
    """Noise-free optical-axis depth through each pixel row of ``uv``; NaN on no return."""
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    out = np.full(len(uv), np.nan)
    if not capsules or len(uv) == 0:
        return out
    k = cam.intrinsics
    d_cam = np.column_stack([(uv[:, 0] - k.cx) / k.fx, (uv[:, 1] - k.cy) / k.fy, np.ones(len(uv))])
    norms = np.linalg.norm(d_cam, axis=1)
    dirs = (d_cam / norms[:, None]) @ cam.world_from_camera.rotation.matrix.T
    a, b, r = _pack(capsules)
    t = np.min(ray_capsules(np.broadcast_to(cam.center, dirs.shape).copy(), dirs, a, b, r), axis=1)
    hit = np.isfinite(t)
    out[hit] = t[hit] / norms[hit]
    return out


def _screen_cover(cam, a, b, r, u, v):
    """Pixels that may see a capsule: union of padded projected boxes (conservative)."""
    k = cam.intrinsics
    pa = transform_point(cam.camera_from_world, a)
    pb = transform_point(cam.camera_from_world, b)
    zmin = np.minimum(pa[:, 2], pb[:, 2]) - r
    if np.any(zmin <= 1e-3):
        return np.ones(len(u), dtype=bool)
    # a sphere of radius r at depth >= zmin spans at most f*r/zmin pixels
    # around its center's projection; 1.5x and +1 px cover the perspective bulge
    pad_u = 1.5 * k.fx * r / zmin * np.sqrt(1.0 + (r / zmin) ** 2) + 1.0
    pad_v = 1.5 * k.fy * r / zmin * np.sqrt(1.0 + (r / zmin) ** 2) + 1.0
    ends = np.stack([pa, pb])
    uu = k.fx * ends[..., 0] / ends[..., 2] + k.cx
    vv = k.fy * ends[..., 1] / ends[..., 2] + k.cy
    u0, u1 = uu.min(axis=0) - pad_u, uu.max(axis=0) + pad_u
    v0, v1 = vv.min(axis=0) - pad_v, vv.max(axis=0) + pad_v
    inside = (u[:, None] >= u0) & (u[:, None] <= u1) & (v[:, None] >= v0) & (v[:, None] <= v1)
    return inside.any(axis=1)


def render_depth(cam, capsules, rng=None, stride=1):
    """Depth raster (meters, NaN = no return) sampled at pixel centers every ``stride`` pixels."""
    k = cam.intrinsics
    us = np.arange(0, k.width, stride) + 0.5
    vs = np.arange(0, k.height, stride) + 0.5
    uu, vv = np.meshgrid(us, vs)
    dirs_cam = np.stack([(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, np.ones_like(uu)], axis=-1).reshape(-1, 3)
    depth = np.full(len(dirs_cam), np.nan)
    if capsules:
        a, b, r = _pack(capsules)
        cand = np.flatnonzero(_screen_cover(cam, a, b, r, uu.ravel(), vv.ravel()))
        norms = np.linalg.norm(dirs_cam[cand], axis=1)
        dirs = (dirs_cam[cand] / norms[:, None]) @ cam.world_from_camera.rotation.matrix.T
        t = np.empty(len(dirs))
        # bounded memory: the per-pair temporaries are (rays, capsules, 3)
        for s in range(0, len(dirs), 8192):
            d = dirs[s : s + 8192]
            t[s : s + 8192] = np.min(ray_capsules(np.broadcast_to(cam.center, d.shape).copy(), d, a, b, r), axis=1)
        hit = np.isfinite(t)
        depth[cand[hit]] = t[hit] / norms[hit]
    noise = cam.depth_noise
    with np.errstate(invalid="ignore"):
        depth[depth > noise.max_range] = np.nan
    if rng is not None:
        eta = rng.standard_normal(len(depth))
        ok = np.isfinite(depth)
        depth[ok] = np.maximum(depth[ok] + noise.sigma(depth[ok]) * eta[ok], 1e-6)
    return depth.reshape(uu.shape)


# ------------------------------------------------------------ props/anchor


@dataclass(frozen=True, eq=False)
class CalibrationProp:
    name: str
    fiducial_points: np.ndarray
    planar: bool

    def __post_init__(self):
        pts = as_points(self.fiducial_points, "fiducial_points")
        if len(pts) < 4:
            raise GeometryError("a calibration prop needs at least 4 fiducials")
        centered = pts - pts.mean(axis=0)
        sv = np.linalg.svd(centered, compute_uv=False)
        if sv[1] < 1e-9 * max(1.0, sv[0]):
            raise GeometryError("fiducials are collinear")
        if self.planar and sv[2] > 1e-9:
            raise GeometryError("planar prop fiducials are not coplanar")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "fiducial_points", pts)

    @property
    def normal(self):
        """Local +Z for planar props (fiducials lie in the local z = const plane)."""
        centered = self.fiducial_points - self.fiducial_points.mean(axis=0)
        n = np.linalg.svd(centered)[2][2]
        return n if n[2] >= 0 else -n


PROPS = {
    "A": CalibrationProp(
        "A",
        np.array([[-0.15, -0.15, 0.0], [0.15, -0.15, 0.0], [0.15, 0.15, 0.0], [-0.15, 0.15, 0.0]]),
        planar=True,
    ),
    "B": CalibrationProp(
        "B",
        np.array(
            [
                [-0.20, -0.20, -0.20],
                [0.20, -0.15, -0.10],
                [-0.10, 0.20, -0.20],
                [0.15, 0.20, 0.20],
                [-0.20, 0.05, 0.15],
                [0.05, -0.20, 0.20],
                [0.20, 0.10, -0.05],
                [-0.05, -0.05, 0.02],
            ]
        ),
        planar=False,
    ),
}


def get_prop(name):
    try:
        return PROPS[name]
    except KeyError:
        raise ValueError(f"unknown prop {name!r}; choose from {sorted(PROPS)}") from None


@dataclass(frozen=True, eq=False)
class WorldAnchor:
    """Planar marker fixed in the world; ``points_local`` lie in its z = 0 plane."""

    points_local: np.ndarray
    world_from_anchor: RigidTransform

    def __post_init__(self):
        CalibrationProp("anchor", self.points_local, planar=True)
        pts = as_points(self.points_local).copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points_local", pts)

    @property
    def fiducial_points(self):
        return transform_point(self.world_from_anchor, self.points_local)

    def as_prop(self):
        return CalibrationProp("anchor", self.points_local, planar=True)


def default_anchor(center=(0.0, 0.0, 0.7), facing=(1.0, 1.0, 0.0), size=0.4):
    """Square marker of side ``size`` whose normal points along ``facing`` (horizontal)."""
    from .geometry import Rotation

    n = as_vec3(facing, "facing")
    n = n / np.linalg.norm(n)
    up = np.array([0.0, 0.0, 1.0])
    x = np.cross(up, n)
    if np.linalg.norm(x) < 1e-9:
        raise GeometryError("anchor facing must not be vertical")
    x /= np.linalg.norm(x)
    y = np.cross(n, x)
    pose = RigidTransform(Rotation.from_matrix(np.column_stack([x, y, n])), center)
    h = size / 2
    pts = np.array([[-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0]])
    return WorldAnchor(pts, pose)


# ------------------------------------------------------------ scene config


@dataclass(frozen=True, eq=False)
class ActorSpec:
    """Motion source: a synthesized kind or a BVH file, placed by ``world_from_root``."""

    motion: str = "stand"
    bvh_path: str = None
    unit_scale: float = 0.01
    harmonization_path: str = None
    world_from_root: RigidTransform = field(default_factory=RigidTransform.identity)


def actor_sequence(actor, frame_rate, duration):
    """World-frame poses of ``actor`` sampled at ``frame_rate`` for ``duration`` seconds.

    BVH clips shorter than ``duration`` hold their last frame.
    """
    from .motion import MOTION_KINDS, HarmonizationMap, MotionSequence, load_bvh, sample_pose, synthesize_motion

    if actor.bvh_path is not None:
        clip = load_bvh(actor.bvh_path, unit_scale=actor.unit_scale)
        hmap = HarmonizationMap.load(actor.harmonization_path) if actor.harmonization_path else None
        n = max(1, int(round(duration * frame_rate)))
        poses = [
            sample_pose(clip, min(i / frame_rate, clip.duration), actor.world_from_root, hmap) for i in range(n)
        ]
        return MotionSequence([SkeletonPose(i / frame_rate, p.positions, p.present) for i, p in enumerate(poses)],
                              frame_rate)
    if actor.motion not in MOTION_KINDS:
        raise ValueError(f"unknown motion kind {actor.motion!r}")
    return synthesize_motion(actor.motion, duration, frame_rate, actor.world_from_root)


@dataclass(frozen=True, eq=False)
class SceneConfig:
    cameras: tuple
    actor: ActorSpec = field(default_factory=ActorSpec)
    prop: str = "B"
    anchor: WorldAnchor = field(default_factory=default_anchor)
    frame_rate: float = 30.0
    duration: float = 1.0
    master_seed: int = 0
    capsule_radii: dict = field(default_factory=lambda: dict(DEFAULT_CAPSULE_RADII))
    detector: dict = field(default_factory=dict)
    calibration: dict = field(default_factory=dict)
    teleop: dict = field(default_factory=dict)
    appearance: dict = field(default_factory=dict)
    document: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        ids = [c.id for c in self.cameras]
        dup = sorted({i for i in ids if ids.count(i) > 1})
        if dup:
            raise ValueError(f"duplicate camera id: {', '.join(dup)}")
        for c in self.cameras:
            if not isinstance(c, CameraModel):
                raise TypeError("cameras must be CameraModel instances")
        if not self.frame_rate > 0 or not self.duration > 0:
            raise ValueError("frame_rate and duration must be positive")
        if self.frame_rate * self.duration < 1 - 1e-9:
            raise ValueError("scene must span at least one frame")

    @property
    def n_frames(self):
        return max(1, int(round(self.frame_rate * self.duration)))

    def __eq__(self, other):
        if not isinstance(other, SceneConfig):
            return NotImplemented
        a, b = self.actor, other.actor
        return (
            len(self.cameras) == len(other.cameras)
            and all(x == y for x, y in zip(self.cameras, other.cameras))
            and (a.motion, a.bvh_path, a.unit_scale, a.harmonization_path)
            == (b.motion, b.bvh_path, b.unit_scale, b.harmonization_path)
            and np.array_equal(a.world_from_root.matrix, b.world_from_root.matrix)
            and np.array_equal(self.anchor.points_local, other.anchor.points_local)
            and np.array_equal(self.anchor.world_from_anchor.matrix, other.anchor.world_from_anchor.matrix)
            and (self.prop, self.frame_rate, self.duration, self.master_seed)
            == (other.prop, other.frame_rate, other.duration, other.master_seed)
            and self.capsule_radii == other.capsule_radii
            and self.detector == other.detector
            and self.calibration == other.calibration
            and self.teleop == other.teleop
            and self.appearance == other.appearance
        )

    __hash__ = None

    def camera(self, camera_id):
        for c in self.cameras:
            if c.id == camera_id:
                return c
        raise KeyError(camera_id)
