"""YAML scene configuration: strict parsing, defaults and a normalized snapshot.

Document layout (every key except ``cameras`` is optional)::

    seed: 42                  # 64-bit master seed
    frame_rate: 30.0          # Hz
    duration: 1.0             # seconds
    jobs: 1                   # worker processes for trial/frame parallelism
    prop: B                   # calibration prop, A (planar) or B (non-planar)
    cameras:
      - id: cam0
        preset: kinect_v2     # or intrinsics: {fx, fy, cx, cy, width, height}
        position: [0.0, 3.0, 1.2]
        look_at: [0.0, 0.0, 1.0]
        up: [0.0, 0.0, 1.0]
        pixel_noise_sigma: 1.0
        depth_noise: {sigma0: 0.002, sigma1: 0.0005, max_range: 8.0}
    actor:
      motion: stand           # stand | wave_right_arm | write_vico
      bvh: null               # path to a BVH clip (overrides motion)
      unit_scale: 0.01
      harmonization: null     # YAML harmonization map for BVH joint names
      world_from_root: {translation: [0, 0, 0], yaw_deg: 0.0}
    anchor: {center: [0, 0, 0.7], facing: [1, 1, 0], size: 0.4}
    capsule_radii: {head: 0.11, ...}
    detector: {sigma_px: 2.0, p_miss: 0.02, mode: depth_lookup, confidence: 0.8, min_confidence: 0.0}
    calibration: {radii: [2, 3, 4, 5], props: null, camera_count: 4, frames: 30,
                  noise_px: 1.0, trials: 20, preset: kinect_v2, refine: true,
                  workspace: {center: [0, 0, 1.2], size: [1, 1, 1], cone_deg: 40, yaw_spread_deg: 360}}
    teleop: {camera: null, trials: 1, dropout: hold, scale: 1.0, ee_initial: [0.5, 0, 0.4],
             mass: 1.0, stiffness: 500.0, damping: null, control_rate: 1000.0, success_threshold: 0.03}
    dataset: {depth_samples: true, depth_stride: 1}
    appearance: {}            # opaque labels copied into dataset records

Relative file paths are resolved against ``base_dir`` (the config file's
directory when loading from disk).
"""

import copy
import math
import numbers
import os

import numpy as np
import yaml

from .camera import PRESETS, CameraIntrinsics, CameraModel, DepthNoiseModel, preset
from .exceptions import ConfigError, HumanSimError
from .geometry import RigidTransform, Rotation, look_at
from .motion.synth import MOTION_KINDS
from .scene import DEFAULT_CAPSULE_RADII, PROPS, ActorSpec, SceneConfig, default_anchor
from .teleop import DROPOUT_POLICIES
from .tracking import LIFT_MODES

__all__ = ["parse_scene_config", "load_scene_config", "scene_snapshot", "default_document", "MINIMAL_CONFIG"]

MINIMAL_CONFIG = """\
seed: 42
duration: 1.0
cameras:
  - id: cam0
    preset: kinect_v2
    position: [0.0, 3.0, 1.2]
    look_at: [0.0, 0.0, 1.0]
actor:
  motion: stand
"""

_U64 = 2**64


def _vec(path, v, n=3):
    if not isinstance(v, (list, tuple)) or len(v) != n:
        raise ConfigError(path, f"expected a list of {n} numbers, got {v!r}")
    return [_num(f"{path}[{i}]", x) for i, x in enumerate(v)]


def _num(path, v, lo=None, lo_strict=False, hi=None):
    if isinstance(v, bool) or not isinstance(v, numbers.Real) or not math.isfinite(v):
        raise ConfigError(path, f"expected a finite number, got {v!r}")
    v = float(v)
    if lo is not None and (v <= lo if lo_strict else v < lo):
        raise ConfigError(path, f"must be {'>' if lo_strict else '>='} {lo:g}, got {v:g}")
    if hi is not None and v > hi:
        raise ConfigError(path, f"must be <= {hi:g}, got {v:g}")
    return v


def _int(path, v, lo=None):
    if isinstance(v, bool) or not isinstance(v, numbers.Integral):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    v = int(v)
    if lo is not None and v < lo:
        raise ConfigError(path, f"must be >= {lo}, got {v}")
    return v


def _bool(path, v):
    if not isinstance(v, bool):
        raise ConfigError(path, f"expected true or false, got {v!r}")
    return v


def _str(path, v, choices=None):
    if not isinstance(v, str) or not v:
        raise ConfigError(path, f"expected a non-empty string, got {v!r}")
    if choices is not None and v not in choices:
        raise ConfigError(path, f"{v!r} is not one of {list(choices)}")
    return v


def _section(path, doc, defaults, required=()):
    """Strict mapping merge: unknown keys rejected, missing keys filled from ``defaults``."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(path, f"expected a mapping, got {type(doc).__name__}")
    for k in doc:
        if not isinstance(k, str) or k not in defaults:
            where = f"{path}.{k}" if path else str(k)
            raise ConfigError(where, f"unknown key (allowed: {', '.join(sorted(defaults))})")
    for k in required:
        if k not in doc:
            raise ConfigError(f"{path}.{k}" if path else k, "missing required field")
    out = copy.deepcopy(defaults)
    out.update(doc)
    return out


_CAMERA_DEFAULTS = {
    "id": None,
    "preset": None,
    "intrinsics": None,
    "position": None,
    "look_at": [0.0, 0.0, 1.0],
    "up": [0.0, 0.0, 1.0],
    "pixel_noise_sigma": 1.0,
    "depth_noise": None,
}
_DEPTH_DEFAULTS = {"sigma0": 0.002, "sigma1": 0.0005, "max_range": 8.0}
_INTRINSIC_KEYS = ("fx", "fy", "cx", "cy", "width", "height")
_ACTOR_DEFAULTS = {
    "motion": "stand",
    "bvh": None,
    "unit_scale": 0.01,
    "harmonization": None,
    "world_from_root": None,
}
_ANCHOR_DEFAULTS = {"center": [0.0, 0.0, 0.7], "facing": [1.0, 1.0, 0.0], "size": 0.4}
_DETECTOR_DEFAULTS = {
    "sigma_px": 2.0,
    "p_miss": 0.02,
    "mode": "depth_lookup",
    "confidence": 0.8,
    "min_confidence": 0.0,
}
_WORKSPACE_DEFAULTS = {"center": [0.0, 0.0, 1.2], "size": [1.0, 1.0, 1.0], "cone_deg": 40.0, "yaw_spread_deg": 360.0}
_CALIBRATION_DEFAULTS = {
    "radii": [2.0, 3.0, 4.0, 5.0],
    "props": None,
    "camera_count": 4,
    "frames": 30,
    "noise_px": 1.0,
    "trials": 20,
    "preset": "kinect_v2",
    "refine": True,
    "workspace": None,
}
_TELEOP_DEFAULTS = {
    "camera": None,
    "trials": 1,
    "dropout": "hold",
    "scale": 1.0,
    "ee_initial": [0.5, 0.0, 0.4],
    "mass": 1.0,
    "stiffness": 500.0,
    "damping": None,
    "control_rate": 1000.0,
    "success_threshold": 0.03,
}
_DATASET_DEFAULTS = {"depth_samples": True, "depth_stride": 1}
_TOP_DEFAULTS = {
    "seed": 0,
    "frame_rate": 30.0,
    "duration": 1.0,
    "jobs": 1,
    "prop": "B",
    "cameras": None,
    "actor": None,
    "anchor": None,
    "capsule_radii": None,
    "detector": None,
    "calibration": None,
    "teleop": None,
    "dataset": None,
    "appearance": None,
}


def default_document():
    """The normalized form of :data:`MINIMAL_CONFIG`."""
    return normalize_document(yaml.safe_load(MINIMAL_CONFIG))


def _norm_camera(path, doc):
    c = _section(path, doc, _CAMERA_DEFAULTS, required=("id", "position"))
    c["id"] = _str(f"{path}.id", c["id"])
    if (c["preset"] is None) == (c["intrinsics"] is None):
        raise ConfigError(path, "give exactly one of 'preset' or 'intrinsics'")
    if c["preset"] is not None:
        c["preset"] = _str(f"{path}.preset", c["preset"], PRESETS)
    else:
        k = _section(f"{path}.intrinsics", c["intrinsics"], {n: None for n in _INTRINSIC_KEYS},
                     required=_INTRINSIC_KEYS)
        for n in ("fx", "fy", "cx", "cy"):
            k[n] = _num(f"{path}.intrinsics.{n}", k[n], 0.0, lo_strict=True)
        for n in ("width", "height"):
            k[n] = _int(f"{path}.intrinsics.{n}", k[n], 1)
        c["intrinsics"] = k
    c["position"] = _vec(f"{path}.position", c["position"])
    c["look_at"] = _vec(f"{path}.look_at", c["look_at"])
    c["up"] = _vec(f"{path}.up", c["up"])
    c["pixel_noise_sigma"] = _num(f"{path}.pixel_noise_sigma", c["pixel_noise_sigma"], 0.0)
    d = _section(f"{path}.depth_noise", c["depth_noise"], _DEPTH_DEFAULTS)
    d["sigma0"] = _num(f"{path}.depth_noise.sigma0", d["sigma0"], 0.0)
    d["sigma1"] = _num(f"{path}.depth_noise.sigma1", d["sigma1"], 0.0)
    d["max_range"] = _num(f"{path}.depth_noise.max_range", d["max_range"], 0.0, lo_strict=True)
    c["depth_noise"] = d
    return c


def _norm_root(path, doc):
    r = _section(path, doc, {"translation": [0.0, 0.0, 0.0], "yaw_deg": None, "quaternion": None})
    r["translation"] = _vec(f"{path}.translation", r["translation"])
    if r["quaternion"] is not None and r["yaw_deg"] is not None:
        raise ConfigError(path, "give at most one of 'yaw_deg' or 'quaternion'")
    if r["quaternion"] is not None:
        q = _vec(f"{path}.quaternion", r["quaternion"], 4)
        if math.sqrt(sum(x * x for x in q)) < 1e-12:
            raise ConfigError(f"{path}.quaternion", "must be non-zero")
        r["quaternion"] = q
        del r["yaw_deg"]
    else:
        r["yaw_deg"] = _num(f"{path}.yaw_deg", 0.0 if r["yaw_deg"] is None else r["yaw_deg"])
        del r["quaternion"]
    return r


def _norm_prop_list(path, v):
    if v is None:
        return None
    if not isinstance(v, list) or not v:
        raise ConfigError(path, "expected a non-empty list of prop names")
    return [_str(f"{path}[{i}]", p, PROPS) for i, p in enumerate(v)]


def normalize_document(doc):
    """Validate ``doc`` and return a new document with every default filled in."""
    top = _section("", doc, _TOP_DEFAULTS, required=("cameras",))
    seed = top["seed"]
    seed = _int("seed", seed, 0)
    if seed >= _U64:
        raise ConfigError("seed", "must fit in 64 bits")
    top["seed"] = seed
    top["frame_rate"] = _num("frame_rate", top["frame_rate"], 0.0, lo_strict=True)
    top["duration"] = _num("duration", top["duration"], 0.0, lo_strict=True)
    if top["frame_rate"] * top["duration"] < 1 - 1e-9:
        raise ConfigError("duration", "frame_rate * duration must cover at least one frame")
    top["jobs"] = _int("jobs", top["jobs"], 1)
    top["prop"] = _str("prop", top["prop"], PROPS)

    cams = top["cameras"]
    if not isinstance(cams, list) or not cams:
        raise ConfigError("cameras", "expected a non-empty list")
    top["cameras"] = [_norm_camera(f"cameras[{i}]", c) for i, c in enumerate(cams)]
    seen = set()
    for i, c in enumerate(top["cameras"]):
        if c["id"] in seen:
            raise ConfigError(f"cameras[{i}].id", f"duplicate camera id {c['id']!r}")
        seen.add(c["id"])

    a = _section("actor", top["actor"], _ACTOR_DEFAULTS)
    a["motion"] = _str("actor.motion", a["motion"], MOTION_KINDS)
    if a["bvh"] is not None:
        a["bvh"] = _str("actor.bvh", a["bvh"])
    if a["harmonization"] is not None:
        a["harmonization"] = _str("actor.harmonization", a["harmonization"])
    a["unit_scale"] = _num("actor.unit_scale", a["unit_scale"], 0.0, lo_strict=True)
    a["world_from_root"] = _norm_root("actor.world_from_root", a["world_from_root"])
    top["actor"] = a

    an = _section("anchor", top["anchor"], _ANCHOR_DEFAULTS)
    an["center"] = _vec("anchor.center", an["center"])
    an["facing"] = _vec("anchor.facing", an["facing"])
    an["size"] = _num("anchor.size", an["size"], 0.0, lo_strict=True)
    top["anchor"] = an

    radii = _section("capsule_radii", top["capsule_radii"], DEFAULT_CAPSULE_RADII)
    top["capsule_radii"] = {k: _num(f"capsule_radii.{k}", v, 0.0, lo_strict=True) for k, v in radii.items()}

    d = _section("detector", top["detector"], _DETECTOR_DEFAULTS)
    d["sigma_px"] = _num("detector.sigma_px", d["sigma_px"], 0.0)
    d["p_miss"] = _num("detector.p_miss", d["p_miss"], 0.0, hi=1.0)
    d["mode"] = _str("detector.mode", d["mode"], LIFT_MODES)
    d["confidence"] = _num("detector.confidence", d["confidence"], 0.0, lo_strict=True, hi=1.0)
    d["min_confidence"] = _num("detector.min_confidence", d["min_confidence"], 0.0, hi=1.0)
    top["detector"] = d

    cal = _section("calibration", top["calibration"], _CALIBRATION_DEFAULTS)
    if not isinstance(cal["radii"], list) or not cal["radii"]:
        raise ConfigError("calibration.radii", "expected a non-empty list")
    cal["radii"] = [_num(f"calibration.radii[{i}]", r, 0.0, lo_strict=True) for i, r in enumerate(cal["radii"])]
    cal["props"] = _norm_prop_list("calibration.props", cal["props"])
    cal["camera_count"] = _int("calibration.camera_count", cal["camera_count"], 2)
    cal["frames"] = _int("calibration.frames", cal["frames"], 1)
    cal["noise_px"] = _num("calibration.noise_px", cal["noise_px"], 0.0)
    cal["trials"] = _int("calibration.trials", cal["trials"], 1)
    cal["preset"] = _str("calibration.preset", cal["preset"], PRESETS)
    cal["refine"] = _bool("calibration.refine", cal["refine"])
    ws = _section("calibration.workspace", cal["workspace"], _WORKSPACE_DEFAULTS)
    ws["center"] = _vec("calibration.workspace.center", ws["center"])
    ws["size"] = _vec("calibration.workspace.size", ws["size"])
    for i, s in enumerate(ws["size"]):
        _num(f"calibration.workspace.size[{i}]", s, 0.0)
    ws["cone_deg"] = _num("calibration.workspace.cone_deg", ws["cone_deg"], 0.0, hi=180.0)
    ws["yaw_spread_deg"] = _num("calibration.workspace.yaw_spread_deg", ws["yaw_spread_deg"], 0.0, hi=360.0)
    cal["workspace"] = ws
    top["calibration"] = cal

    t = _section("teleop", top["teleop"], _TELEOP_DEFAULTS)
    if t["camera"] is not None:
        t["camera"] = _str("teleop.camera", t["camera"])
        if t["camera"] not in seen:
            raise ConfigError("teleop.camera", f"no camera with id {t['camera']!r}")
    t["trials"] = _int("teleop.trials", t["trials"], 1)
    t["dropout"] = _str("teleop.dropout", t["dropout"], DROPOUT_POLICIES)
    t["scale"] = _num("teleop.scale", t["scale"], 0.0, lo_strict=True)
    t["ee_initial"] = _vec("teleop.ee_initial", t["ee_initial"])
    t["mass"] = _num("teleop.mass", t["mass"], 0.0, lo_strict=True)
    t["stiffness"] = _num("teleop.stiffness", t["stiffness"], 0.0, lo_strict=True)
    if t["damping"] is not None:
        t["damping"] = _num("teleop.damping", t["damping"], 0.0)
    t["control_rate"] = _num("teleop.control_rate", t["control_rate"], 100.0)
    t["success_threshold"] = _num("teleop.success_threshold", t["success_threshold"], 0.0, lo_strict=True)
    top["teleop"] = t

    ds = _section("dataset", top["dataset"], _DATASET_DEFAULTS)
    ds["depth_samples"] = _bool("dataset.depth_samples", ds["depth_samples"])
    ds["depth_stride"] = _int("dataset.depth_stride", ds["depth_stride"], 1)
    top["dataset"] = ds

    ap = top["appearance"] if top["appearance"] is not None else {}
    if not isinstance(ap, dict):
        raise ConfigError("appearance", "expected a mapping of labels")
    for k, v in ap.items():
        if not isinstance(k, str):
            raise ConfigError("appearance", f"label keys must be strings, got {k!r}")
        if not (v is None or isinstance(v, (str, bool, numbers.Real))):
            raise ConfigError(f"appearance.{k}", "labels must be scalars")
    top["appearance"] = dict(sorted(ap.items()))
    return top


def _camera(c):
    if c["preset"] is not None:
        intr = preset(c["preset"]).intrinsics
    else:
        k = c["intrinsics"]
        intr = CameraIntrinsics(k["fx"], k["fy"], k["cx"], k["cy"], k["width"], k["height"])
    pose = look_at(c["position"], c["look_at"], c["up"])
    d = c["depth_noise"]
    return CameraModel(c["id"], intr, pose, DepthNoiseModel(d["sigma0"], d["sigma1"], d["max_range"]),
                       c["pixel_noise_sigma"])


def _root(r):
    if "quaternion" in r:
        rot = Rotation(np.array(r["quaternion"]))
    else:
        rot = Rotation.from_axis_angle([0.0, 0.0, 1.0], math.radians(r["yaw_deg"]))
    return RigidTransform(rot, r["translation"])


def _resolve(path, base_dir, where):
    if path is None:
        return None
    full = path if os.path.isabs(path) or base_dir is None else os.path.join(base_dir, path)
    if not os.path.isfile(full):
        raise ConfigError(where, f"cannot read file {full!r}")
    return full


def parse_scene_config(document, base_dir=None):
    """Parse YAML text (or an already-loaded mapping) into a validated :class:`SceneConfig`.

    Raises :class:`ConfigError` whose message starts with the dotted path of
    the offending key.
    """
    if isinstance(document, str):
        try:
            doc = yaml.safe_load(document)
        except yaml.YAMLError as exc:
            raise ConfigError("", f"malformed YAML: {exc}") from None
    else:
        doc = document
    if doc is None:
        raise ConfigError("", "empty configuration document")
    norm = normalize_document(doc)
    try:
        cameras = tuple(_camera(c) for c in norm["cameras"])
    except (HumanSimError, ValueError) as exc:
        raise ConfigError("cameras", str(exc)) from None
    a = norm["actor"]
    # store resolved paths so the snapshot reparses from any directory
    a["bvh"] = _resolve(a["bvh"], base_dir, "actor.bvh")
    a["harmonization"] = _resolve(a["harmonization"], base_dir, "actor.harmonization")
    if a["bvh"] is not None:
        a["bvh"] = os.path.abspath(a["bvh"])
    if a["harmonization"] is not None:
        a["harmonization"] = os.path.abspath(a["harmonization"])
    actor = ActorSpec(
        motion=a["motion"],
        bvh_path=a["bvh"],
        unit_scale=a["unit_scale"],
        harmonization_path=a["harmonization"],
        world_from_root=_root(a["world_from_root"]),
    )
    try:
        anchor = default_anchor(norm["anchor"]["center"], norm["anchor"]["facing"], norm["anchor"]["size"])
    except (HumanSimError, ValueError) as exc:
        raise ConfigError("anchor", str(exc)) from None
    return SceneConfig(
        cameras=cameras,
        actor=actor,
        prop=norm["prop"],
        anchor=anchor,
        frame_rate=norm["frame_rate"],
        duration=norm["duration"],
        master_seed=norm["seed"],
        capsule_radii=dict(norm["capsule_radii"]),
        detector=dict(norm["detector"]),
        calibration=copy.deepcopy(norm["calibration"]),
        teleop=copy.deepcopy(norm["teleop"]),
        appearance=dict(norm["appearance"]),
        document=norm,
    )


def load_scene_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("", f"cannot read config {path!r}: {exc.strerror}") from None
    return parse_scene_config(text, base_dir=os.path.dirname(os.path.abspath(path)))


def scene_snapshot(scene):
    """Normalized YAML text of a parsed scene; reparses to an equal scene."""
    if not scene.document:
        raise ValueError("scene snapshot needs a scene built by parse_scene_config")
    return yaml.safe_dump(scene.document, sort_keys=True, default_flow_style=None, allow_unicode=False)
