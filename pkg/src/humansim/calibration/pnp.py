"""Perspective-n-Point: homography / DLT initialisation and Gauss-Newton refinement."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .._validation import as_pixels, as_points
from ..exceptions import DegenerateConfigurationError, TooFewPointsError
from ..geometry import RigidTransform, exp_so3

__all__ = ["PnpSolution", "solve_pnp", "solve_pnp_candidates", "PnPSolver", "reprojection_residuals"]

PLANAR_TOL = 1e-9


@dataclass(frozen=True)
class PnpSolution:
    camera_from_prop: RigidTransform
    rms_reprojection: float
    point_count: int
    iterations: int = 0


def _project(r, t, pts, k):
    pc = pts @ r.T + t
    z = pc[:, 2]
    uv = np.empty((len(pts), 2))
    uv[:, 0] = k.fx * pc[:, 0] / z + k.cx
    uv[:, 1] = k.fy * pc[:, 1] / z + k.cy
    return uv, pc


def reprojection_residuals(camera_from_prop, points_local, pixels, intr):
    """Per-point pixel residual vectors ``projected - observed``."""
    uv, _ = _project(camera_from_prop.rotation.matrix, camera_from_prop.translation, points_local, intr)
    return uv - pixels


def _hartley_2d(x):
    c = x.mean(axis=0)
    d = np.sqrt(((x - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2) / d if d > 0 else 1.0
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _hartley_3d(x):
    c = x.mean(axis=0)
    d = np.sqrt(((x - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(3) / d if d > 0 else 1.0
    t = np.eye(4)
    t[:3, :3] *= s
    t[:3, 3] = -s * c
    return t


def _nearest_rotation(m):
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


def _homography(src, dst):
    """DLT homography mapping 2D ``src`` to 2D ``dst`` (both ``(n, 2)``)."""
    ts, td = _hartley_2d(src), _hartley_2d(dst)
    sh = np.column_stack([src, np.ones(len(src))]) @ ts.T
    dh = np.column_stack([dst, np.ones(len(dst))]) @ td.T
    rows = []
    for (x, y, w), (u, v, q) in zip(sh, dh):
        rows.append([0, 0, 0, -q * x, -q * y, -q * w, v * x, v * y, v * w])
        rows.append([q * x, q * y, q * w, 0, 0, 0, -u * x, -u * y, -u * w])
    _, sv, vt = np.linalg.svd(np.array(rows))
    if len(sv) >= 8 and sv[7] < 1e-12 * sv[0]:
        raise DegenerateConfigurationError("homography system is rank deficient")
    h = vt[-1].reshape(3, 3)
    return np.linalg.inv(td) @ h @ ts


def _init_planar(pts, m, pix, k):
    """Initial pose from a planar point set; ``m`` are normalised image coordinates."""
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c)
    # plane_from_prop: p -> r_pp (p - c), a proper rotation
    r_pp = np.vstack([vt[0], vt[1], np.cross(vt[0], vt[1])])
    plane_xy = (pts - c) @ r_pp[:2].T
    h = _homography(plane_xy, m)
    best = None
    # the homography scale is known up to sign: two candidate decompositions
    for sign in (1.0, -1.0):
        lam = sign * 2.0 / (np.linalg.norm(h[:, 0]) + np.linalg.norm(h[:, 1]))
        r1, r2 = lam * h[:, 0], lam * h[:, 1]
        r_cp = _nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
        t_cp = lam * h[:, 2]
        r = r_cp @ r_pp
        t = t_cp - r @ c
        uv, pc = _project(r, t, pts, k)
        # prefer all points in front; with noise a near edge-on plane may only
        # manage a positive centroid depth
        front = int(np.sum(pc[:, 2] > 0))
        if t_cp[2] <= 0:
            continue
        err = float(np.sum((uv - pix) ** 2)) if front == len(pts) else np.inf
        key = (-front, err)
        if best is None or key < best[0]:
            best = (key, r, t)
    if best is None:
        raise DegenerateConfigurationError("no homography decomposition places the points in front of the camera")
    return best[1], best[2]


def _init_dlt(pts, m):
    t3 = _hartley_3d(pts)
    t2 = _hartley_2d(m)
    ph = np.column_stack([pts, np.ones(len(pts))]) @ t3.T
    mh = np.column_stack([m, np.ones(len(m))]) @ t2.T
    rows = []
    for xw, (u, v, w) in zip(ph, mh):
        rows.append(np.concatenate([np.zeros(4), -w * xw, v * xw]))
        rows.append(np.concatenate([w * xw, np.zeros(4), -u * xw]))
    _, sv, vt = np.linalg.svd(np.array(rows))
    if sv[10] < 1e-12 * sv[0]:
        raise DegenerateConfigurationError("DLT system is rank deficient")
    p = np.linalg.inv(t2) @ vt[-1].reshape(3, 4) @ t3
    # fix the projective sign so that the points sit in front of the camera
    depth = np.column_stack([pts, np.ones(len(pts))]) @ p[2]
    if np.sum(np.sign(depth)) < 0:
        p = -p
    s = np.linalg.svd(p[:, :3], compute_uv=False)
    r = _nearest_rotation(p[:, :3])
    t = p[:, 3] / s.mean()
    return r, t


def _skew_rows(v):
    out = np.zeros((len(v), 3, 3))
    out[:, 0, 1], out[:, 0, 2] = -v[:, 2], v[:, 1]
    out[:, 1, 0], out[:, 1, 2] = v[:, 2], -v[:, 0]
    out[:, 2, 0], out[:, 2, 1] = -v[:, 1], v[:, 0]
    return out


def _gauss_newton(r, t, pts, pix, k, max_iter=50, tol=1e-10):
    uv, pc = _project(r, t, pts, k)
    res = (uv - pix).ravel()
    cost = float(res @ res) if np.all(pc[:, 2] > 0) else np.inf
    n = len(pts)
    it = 0
    for it in range(1, max_iter + 1):
        x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
        jp = np.zeros((n, 2, 3))
        jp[:, 0, 0] = k.fx / z
        jp[:, 0, 2] = -k.fx * x / z**2
        jp[:, 1, 1] = k.fy / z
        jp[:, 1, 2] = -k.fy * y / z**2
        # left perturbation: d(pc) = [-[pc]x | I] @ (dw, dt)
        j = np.concatenate([-jp @ _skew_rows(pc), jp], axis=2).reshape(-1, 6)
        a = j.T @ j
        g = j.T @ res
        ev = np.linalg.eigvalsh(a)
        if not ev[0] > ev[-1] * 1e-14:
            raise DegenerateConfigurationError("PnP normal equations are rank deficient")
        step = -np.linalg.solve(a, g)
        accepted = False
        alpha = 1.0
        for _ in range(20):
            dr = exp_so3(alpha * step[:3])
            r_new = dr @ r
            t_new = dr @ t + alpha * step[3:]
            uv_new, pc_new = _project(r_new, t_new, pts, k)
            if np.all(pc_new[:, 2] > 0):
                res_new = (uv_new - pix).ravel()
                cost_new = float(res_new @ res_new)
                if cost_new <= cost:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            break
        stalled = cost - cost_new <= 1e-15 * cost
        r, t, pc, res, cost = r_new, t_new, pc_new, res_new, cost_new
        if alpha * np.linalg.norm(step) < tol or stalled:
            break
    return r, t, cost, it


def _mirror_start(r, t, centroid, normal_local):
    """Starting pose for the second planar minimum.

    The plane normal is reflected about the line of sight through the
    plane centroid while the centroid stays fixed. Returns ``None`` when the
    reflection is (nearly) the identity.
    """
    p0 = r @ centroid + t
    v = p0 / np.linalg.norm(p0)
    n = r @ normal_local
    n2 = 2.0 * np.dot(n, v) * v - n
    axis = np.cross(n, n2)
    s = np.linalg.norm(axis)
    if s < 1e-9:
        return None
    angle = np.arctan2(s, np.dot(n, n2))
    r2 = exp_so3(axis / s * angle) @ r
    return r2, p0 - r2 @ centroid


def _prepare(points_local, pixels, intr):
    pts = as_points(points_local, "points_local")
    pix = as_pixels(pixels)
    if len(pts) != len(pix):
        raise ValueError("points_local and pixels must have the same length")
    n = len(pts)
    if n < 4:
        raise TooFewPointsError(f"PnP needs at least 4 correspondences, got {n}")
    centered = pts - pts.mean(axis=0)
    _, sv, vt = np.linalg.svd(centered)
    scale = max(sv[0], 1e-300)
    if sv[1] < 1e-9 * scale:
        raise DegenerateConfigurationError("object points are collinear")
    planar = sv[2] < PLANAR_TOL * scale
    if not planar and n < 6:
        raise TooFewPointsError(f"non-planar PnP needs at least 6 correspondences, got {n}")
    m = np.column_stack([(pix[:, 0] - intr.cx) / intr.fx, (pix[:, 1] - intr.cy) / intr.fy])
    return pts, pix, m, planar, vt[2]


def solve_pnp_candidates(points_local, pixels, intr, max_iter=50, tol=1e-10):
    """All local PnP minima found, best first.

    Non-planar sets give one solution. Planar sets also try the mirrored
    pose (the classic two-fold ambiguity of a small or distant plane) and
    return it when Gauss-Newton settles on a distinct minimum.
    """
    pts, pix, m, planar, normal = _prepare(points_local, pixels, intr)
    n = len(pts)
    if planar:
        r, t = _init_planar(pts, m, pix, intr)
    else:
        r, t = _init_dlt(pts, m)
    r, t, cost, iters = _gauss_newton(r, t, pts, pix, intr, max_iter=max_iter, tol=tol)
    sols = [(cost, r, t, iters)]
    if planar:
        start = _mirror_start(r, t, pts.mean(axis=0), normal)
        if start is not None:
            uv, pc = _project(start[0], start[1], pts, intr)
            if np.all(pc[:, 2] > 0):
                r2, t2, cost2, it2 = _gauss_newton(start[0], start[1], pts, pix, intr, max_iter=max_iter, tol=tol)
                if np.isfinite(cost2) and np.linalg.norm(_rotvec_between(r, r2)) > 1e-6:
                    sols.append((cost2, r2, t2, it2))
    sols.sort(key=lambda s: s[0])
    return [PnpSolution(RigidTransform.from_rt(r, t), float(np.sqrt(c / (2 * n))), n, it) for c, r, t, it in sols]


def _rotvec_between(a, b):
    d = a.T @ b
    angle = np.arccos(np.clip((np.trace(d) - 1.0) / 2.0, -1.0, 1.0))
    return np.array([angle])


def solve_pnp(points_local, pixels, intr, max_iter=50, tol=1e-10):
    """Camera-from-object pose minimising the squared reprojection error.

    Planar point sets are initialised from a homography decomposition (both
    mirrored minima are refined and the cheaper kept), others from a 6-point
    DLT. ``rms_reprojection`` is the per-coordinate RMS,
    ``sqrt(sum(r**2) / (2 n))``.
    """
    return solve_pnp_candidates(points_local, pixels, intr, max_iter=max_iter, tol=tol)[0]


class PnPSolver(BaseEstimator):
    """Estimator wrapper around :func:`solve_pnp`.

    ``fit(X, y)`` takes object points ``X`` ``(n, 3)`` and observed pixels
    ``y`` ``(n, 2)``; ``predict(X)`` projects object points with the fitted
    pose.
    """

    def __init__(self, intrinsics=None, max_iter=50, tol=1e-10):
        self.intrinsics = intrinsics
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        if self.intrinsics is None:
            raise ValueError("PnPSolver requires intrinsics")
        sol = solve_pnp(X, y, self.intrinsics, max_iter=self.max_iter, tol=self.tol)
        self.solution_ = sol
        self.camera_from_object_ = sol.camera_from_prop
        self.rms_reprojection_ = sol.rms_reprojection
        self.n_points_ = sol.point_count
        return self

    def predict(self, X):
        check_is_fitted(self, "camera_from_object_")
        pts = as_points(X)
        t = self.camera_from_object_
        uv, _ = _project(t.rotation.matrix, t.translation, pts, self.intrinsics)
        return uv

    def score(self, X, y):
        """Negative per-coordinate RMS reprojection error (higher is better)."""
        r = self.predict(X) - as_pixels(y)
        return -float(np.sqrt(np.mean(r**2)))
