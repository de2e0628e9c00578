"""Annotation dataset export: one JSON record per frame, optional depth rasters."""

import json
import math
import os

import numpy as np

from . import __version__
from .motion.skeleton import CANONICAL_JOINTS, N_JOINTS
from .reporting import RunManifest, config_digest
from .rng import derive_rng
from .scene import actor_sequence, build_capsules, render_depth, true_depths
from .tracking import DEFAULT_CONFIDENCE, DEFAULT_P_MISS, DEFAULT_SIGMA_PX, simulate_detection

__all__ = ["export_dataset", "frame_record", "write_pgm", "read_pgm", "RECORDS_FILE", "SNAPSHOT_FILE", "MANIFEST_FILE"]

RECORDS_FILE = "records.jsonl"
SNAPSHOT_FILE = "scene.yaml"
MANIFEST_FILE = "manifest.json"
DEPTH_SCALE_MM = 1000.0


def _f(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _vec(v):
    return [_f(x) for x in v]


def _camera_header(cam):
    k = cam.intrinsics
    pose = cam.world_from_camera
    return {
        "id": cam.id,
        "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "width": int(k.width), "height": int(k.height)},
        "world_from_camera": {"translation": _vec(pose.translation), "quaternion_wxyz": _vec(pose.rotation.quat)},
    }


def frame_record(scene, f, pose, capsules, detector=None, depth_samples=True):
    """The dataset record of frame ``f``. Noise streams match the ``track`` subcommand's detector."""
    d = dict(scene.detector)
    if detector:
        d.update(detector)
    sigma = float(d.get("sigma_px", DEFAULT_SIGMA_PX))
    p_miss = float(d.get("p_miss", DEFAULT_P_MISS))
    conf = float(d.get("confidence", DEFAULT_CONFIDENCE))
    cams = []
    for cam in scene.cameras:
        det = simulate_detection(cam, pose, capsules, sigma, p_miss,
                                 derive_rng(scene.master_seed, "detect:" + cam.id, f), f, conf)
        entry = _camera_header(cam)
        entry["keypoints"] = {
            name: ([_f(det.pixels[j, 0]), _f(det.pixels[j, 1]), _f(det.confidence[j])] if det.detected[j] else None)
            for j, name in enumerate(CANONICAL_JOINTS)
        }
        if depth_samples:
            eta = derive_rng(scene.master_seed, "depth:" + cam.id, f).standard_normal(N_JOINTS)
            k = cam.intrinsics
            pix = det.pixels
            with np.errstate(invalid="ignore"):
                ok = det.detected & (pix[:, 0] >= 0) & (pix[:, 0] < k.width) & (pix[:, 1] >= 0) & (pix[:, 1] < k.height)
            z = np.full(N_JOINTS, np.nan)
            z[ok] = true_depths(cam, pix[ok], capsules)
            noise = cam.depth_noise
            with np.errstate(invalid="ignore"):
                ok &= np.isfinite(z) & (z <= noise.max_range)
            zn = np.maximum(z + noise.sigma(z) * eta, 1e-6)
            entry["depth_samples"] = [
                [name, _f(pix[j, 0]), _f(pix[j, 1]), _f(zn[j])] for j, name in enumerate(CANONICAL_JOINTS) if ok[j]
            ]
        cams.append(entry)
    return {
        "frame_id": int(f),
        "timestamp": _f(f / scene.frame_rate),
        "appearance": dict(scene.appearance),
        "ground_truth": {
            name: (_vec(pose.positions[j]) if pose.present[j] else None) for j, name in enumerate(CANONICAL_JOINTS)
        },
        "cameras": cams,
    }


def write_pgm(path, depth_m):
    """16-bit binary PGM of depth in millimeters; 0 means no return."""
    d = np.asarray(depth_m, dtype=float)
    mm = np.where(np.isfinite(d), np.clip(np.rint(d * DEPTH_SCALE_MM), 0, 65535), 0).astype(">u2")
    h, w = mm.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(mm.tobytes())
    return path


def read_pgm(path):
    """Inverse of :func:`write_pgm`: depth in meters with NaN for no return."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(x) for x in parts[1].split())
    mm = np.frombuffer(parts[3], dtype=">u2").reshape(h, w).astype(float)
    return np.where(mm > 0, mm / DEPTH_SCALE_MM, np.nan)


def export_dataset(scene, out_dir, full_depth=False, config_text=None, subcommand="dataset"):
    """Write ``records.jsonl``, a ``scene.yaml`` snapshot, optional depth rasters and a manifest.

    Returns the :class:`RunManifest`. ``config_text`` is hashed into the
    manifest; without it the snapshot text is used.
    """
    from .config import scene_snapshot

    os.makedirs(out_dir, exist_ok=True)
    snapshot = scene_snapshot(scene)
    manifest = RunManifest(__version__, config_digest(config_text if config_text is not None else snapshot),
                           int(scene.master_seed), subcommand)
    settings = scene.document.get("dataset", {}) if scene.document else {}
    stride = int(settings.get("depth_stride", 1))
    sparse = bool(settings.get("depth_samples", True))

    snap_path = os.path.join(out_dir, SNAPSHOT_FILE)
    with open(snap_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(snapshot)
    manifest.add_output(snap_path, out_dir)

    seq = actor_sequence(scene.actor, scene.frame_rate, scene.duration)
    rec_path = os.path.join(out_dir, RECORDS_FILE)
    depth_dir = os.path.join(out_dir, "depth")
    if full_depth:
        os.makedirs(depth_dir, exist_ok=True)
    with open(rec_path, "w", encoding="utf-8", newline="\n") as fh:
        for f, pose in enumerate(seq):
            caps = build_capsules(pose, scene.capsule_radii)
            rec = frame_record(scene, f, pose, caps, depth_samples=sparse)
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":"), allow_nan=False))
            fh.write("\n")
            if full_depth:
                for cam in scene.cameras:
                    rng = derive_rng(scene.master_seed, "raster:" + cam.id, f)
                    p = os.path.join(depth_dir, f"{cam.id}_{f:06d}.pgm")
                    write_pgm(p, render_depth(cam, caps, rng, stride))
                    manifest.add_output(p, out_dir)
    manifest.add_output(rec_path, out_dir)
    manifest.finish()
    manifest.write(os.path.join(out_dir, MANIFEST_FILE))
    return manifest
