"""Command-line entry point: ``humansim <subcommand> [--config PATH] [--seed N] [--out DIR]``.

Exit status: 0 success, 1 usage or validation error, 2 runtime error.
"""

import argparse
import logging
import os
import sys

import numpy as np
import yaml

from . import __version__
from .calibration.experiment import REPORT_HEADER, Workspace, run_calibration_experiment
from .camera import preset_table
from .config import MINIMAL_CONFIG, parse_scene_config, scene_snapshot
from .dataset import MANIFEST_FILE, export_dataset
from .exceptions import ConfigError, FramingError, HumanSimError, TrackingLostError
from .motion.skeleton import CANONICAL_JOINTS
from .reporting import RunManifest, config_digest, write_csv, write_metrics_csv
from .scene import build_capsules, get_prop
from .teleop import (
    POLYLINE_HEADER,
    TRACE_HEADER,
    ImpedanceParams,
    TeleopConfig,
    run_teleop_experiment,
)
from .tracking import LOG_HEADER, METRICS_HEADER, run_tracking_experiment

__all__ = ["main", "build_parser", "SUBCOMMANDS"]

log = logging.getLogger("humansim")

SUBCOMMANDS = ("calibrate", "track", "teleop", "dataset", "info")
_U64 = 2**64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through exit status 1 instead of 2."""

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _seed(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < _U64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _jobs(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid job count {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("jobs must be >= 1")
    return v


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="scene configuration (YAML); a one-camera default is used if omitted")
    common.add_argument("--seed", type=_seed, metavar="U64", help="master seed, overrides the config")
    common.add_argument("--out", metavar="DIR", default="results", help="output directory (default: results)")
    common.add_argument("--jobs", type=_jobs, metavar="N", help="worker processes, overrides the config")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p = _Parser(prog="humansim", description="Synthetic multi-camera human-motion experiments.")
    p.add_argument("--version", action="version", version=f"humansim {__version__}")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}", parser_class=_Parser)
    sub.add_parser("calibrate", parents=[common], help="camera extrinsic calibration radius sweep")
    sub.add_parser("track", parents=[common], help="multi-camera keypoint tracking and fusion")
    sub.add_parser("teleop", parents=[common], help="wrist-driven impedance teleoperation (write_vico actor)")
    d = sub.add_parser("dataset", parents=[common], help="export an annotation dataset")
    d.add_argument("--full-depth", action="store_true", help="also write one 16-bit PGM depth raster per camera per frame")
    sub.add_parser("info", parents=[common], help="print the scene summary and the camera preset table")
    return p


def _load(args):
    """``(scene, config_text)``; validation problems raise ConfigError."""
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError("", f"cannot read config {args.config!r}: {exc.strerror}") from None
        base = os.path.dirname(os.path.abspath(args.config))
    else:
        text, base = MINIMAL_CONFIG, None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"malformed YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("", "configuration must be a mapping")
    if args.seed is not None:
        doc["seed"] = args.seed
    return parse_scene_config(doc, base_dir=base), text


def _calibrate(scene, out, manifest, jobs):
    cal = scene.calibration
    ws = cal["workspace"]
    report = run_calibration_experiment(
        radii=cal["radii"],
        props=cal["props"] or [scene.prop],
        camera_count=cal["camera_count"],
        frames=cal["frames"],
        noise_px=cal["noise_px"],
        trials=cal["trials"],
        master_seed=scene.master_seed,
        preset_name=cal["preset"],
        refine=cal["refine"],
        workspace=Workspace(ws["center"], ws["size"], ws["cone_deg"], yaw_spread=np.radians(ws["yaw_spread_deg"])),
        anchor=scene.anchor,
        n_jobs=jobs,
    )
    paths = [write_metrics_csv((REPORT_HEADER, report.rows), os.path.join(out, "calibration.csv"))]
    summary = []
    for (prop, radius), mean_t in report.mean_translation_by().items():
        rot = [r[4] for r in report.rows if r[1] == prop and r[0] == radius]
        summary.append((prop, radius, mean_t, float(np.mean(rot)), len(rot)))
    header = ("prop", "radius_m", "mean_trans_err_m", "mean_rot_err_rad", "trials")
    paths.append(write_csv(os.path.join(out, "calibration_summary.csv"), header, summary))
    for prop, radius, t, r, _ in summary:
        print(f"prop {prop} radius {radius:g} m: mean translation error {t:.4f} m, rotation {r:.4f} rad")
    return paths


def _track(scene, out, manifest, jobs):
    run = run_tracking_experiment(scene, n_jobs=jobs)
    paths = [
        write_metrics_csv((METRICS_HEADER, run.metrics.rows()), os.path.join(out, "tracking_metrics.csv")),
        write_csv(os.path.join(out, "tracking_log.csv"), LOG_HEADER, run.log_rows),
    ]
    for src in run.metrics.sources:
        vals = [run.metrics.rmse(src, j) for j in CANONICAL_JOINTS]
        vals = [v for v in vals if v is not None]
        mean = f"{np.mean(vals):.4f} m" if vals else "n/a"
        print(f"{src}: mean joint RMSE {mean}")
    return paths


def _teleop(scene, out, manifest, jobs):
    from .motion.synth import synthesize_motion

    if scene.actor.bvh_path is not None or scene.actor.motion != "write_vico":
        raise ConfigError("actor.motion", "teleop needs the write_vico synthesized motion")
    t = scene.teleop
    d = scene.detector
    cam = scene.camera(t["camera"]) if t["camera"] is not None else scene.cameras[0]
    cfg = TeleopConfig(
        sigma_px=d["sigma_px"],
        p_miss=d["p_miss"],
        mode=d["mode"],
        params=ImpedanceParams(t["mass"], t["stiffness"], t["damping"]),
        scale=t["scale"],
        ee_initial=tuple(t["ee_initial"]),
        dropout=t["dropout"],
        frame_rate=scene.frame_rate,
        control_rate=t["control_rate"],
        success_threshold=t["success_threshold"],
    )
    motion = synthesize_motion("write_vico", rate=scene.frame_rate, world_from_root=scene.actor.world_from_root)
    capsules = [build_capsules(p, scene.capsule_radii) for p in motion]
    rows, first = [], None
    for trial in range(t["trials"]):
        try:
            res = run_teleop_experiment(cam, cfg, scene.master_seed, trial, motion, capsules)
        except (FramingError, TrackingLostError) as exc:
            rows.append((trial, None, 0, None, None, type(exc).__name__))
            print(f"trial {trial}: {exc}")
            continue
        if first is None:
            first = (trial, res)
        rows.append((trial, res.path_rmse, int(res.success), res.dropouts, res.acquired_frame, "ok"))
        print(f"trial {trial}: path RMSE {res.path_rmse:.4f} m ({'success' if res.success else 'failure'})")
    header = ("trial", "path_rmse_m", "success", "dropouts", "acquired_frame", "status")
    paths = [write_csv(os.path.join(out, "teleop_summary.csv"), header, rows)]
    if first is not None:
        trace = first[1].trace
        paths.append(write_csv(os.path.join(out, "teleop_trace.csv"), TRACE_HEADER, trace.rows()))
        paths.append(write_csv(os.path.join(out, "teleop_polyline.csv"), POLYLINE_HEADER, trace.polyline_rows()))
    else:
        for p in paths:
            manifest.add_output(p, out)
        raise FramingError("every teleop trial failed to acquire or keep the wrist")
    return paths


def _info_text(scene):
    lines = [
        f"humansim {__version__}",
        f"seed {scene.master_seed}, {scene.frame_rate:g} Hz for {scene.duration:g} s ({scene.n_frames} frames)",
        f"actor: {scene.actor.bvh_path or scene.actor.motion}",
        f"prop: {scene.prop} ({'planar' if get_prop(scene.prop).planar else 'non-planar'})",
        "cameras:",
    ]
    for c in scene.cameras:
        k = c.intrinsics
        pos = ", ".join(f"{x:.3f}" for x in c.center)
        lines.append(f"  {c.id}: {k.width}x{k.height} fx={k.fx:.2f} at ({pos})")
    lines += ["", "presets:", preset_table()]
    return "\n".join(lines) + "\n"


def _info(scene, out, manifest, jobs):
    text = _info_text(scene)
    sys.stdout.write(text)
    path = os.path.join(out, "info.txt")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return [path]


_HANDLERS = {"calibrate": _calibrate, "track": _track, "teleop": _teleop, "info": _info}


def _run(args, scene, text):
    out = args.out
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create output directory {out!r}: {exc.strerror}") from None
    if args.command == "dataset":
        export_dataset(scene, out, full_depth=args.full_depth, config_text=text)
        print(f"wrote {scene.n_frames} records to {os.path.join(out, 'records.jsonl')}")
        return
    manifest = RunManifest(__version__, config_digest(text), int(scene.master_seed), args.command)
    try:
        # the worker count is an execution detail; it never enters the snapshot
        jobs = args.jobs if args.jobs is not None else scene.document["jobs"]
        paths = _HANDLERS[args.command](scene, out, manifest, jobs)
        for p in paths:
            manifest.add_output(p, out)
        snap = os.path.join(out, "scene.yaml")
        with open(snap, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(scene_snapshot(scene))
        manifest.add_output(snap, out)
    finally:
        manifest.finish()
        manifest.write(os.path.join(out, MANIFEST_FILE))


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "humansim: error: a subcommand is required")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        scene, text = _load(args)
    except (ConfigError, ValueError) as exc:
        print(f"humansim: invalid configuration: {exc}", file=sys.stderr)
        return 1
    try:
        _run(args, scene, text)
    except ConfigError as exc:
        print(f"humansim: invalid configuration: {exc}", file=sys.stderr)
        return 1
    except (HumanSimError, OSError, ValueError, RuntimeError) as exc:
        print(f"humansim: {args.command} failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
