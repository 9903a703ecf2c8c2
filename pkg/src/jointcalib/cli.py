"""Command-line entry point.

Every command reads one JSON run config (``--config``) and an optional
``--seed``; outputs are sorted-key JSON, ASCII PLY or binary PPM, written
atomically, and carry no timestamps or absolute paths, so a re-run with the
same config and seed produces byte-identical files.

Exit codes: 0 success, 2 config, 3 I/O, 4 detection, 5 optimization.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io
from .board import BoardSpec, circle_centers
from .detect import DetectionParams
from .errors import CalibrationError, InsufficientViews
from .experiments import ablation_study, camera_errors, consistency_study, evaluate_extrinsic, synth_view_group
from .geometry import CameraModel, Pose, project
from .optimize import OptimizeOptions
from .pipeline import (
    calibrate_entries,
    detect_dir,
    entries_from_detections,
    frame_stem,
    list_frames,
    observations_doc,
)
from .render import render_overlay
from .simulate import SceneSpec, default_camera, default_scene, pose_from_config, scene_truth, simulate_frame

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DETECT, EXIT_OPTIMIZE = 0, 2, 3, 4, 5

_STAGE_EXIT = {
    "config": EXIT_CONFIG,
    "evaluate": EXIT_CONFIG,
    "io": EXIT_IO,
    "detect": EXIT_DETECT,
    "simulate": EXIT_CONFIG,
    "geometry": EXIT_OPTIMIZE,
    "initialize": EXIT_OPTIMIZE,
    "optimize": EXIT_OPTIMIZE,
    "calibrate": EXIT_OPTIMIZE,
}


class ConfigError(CalibrationError):
    stage = "config"


class InputMissing(CalibrationError):
    """A required input file is absent; ``stage`` says which step needed it."""

    stage = "io"

    def __init__(self, message, stage="io"):
        super().__init__(message)
        self.stage = stage


class DetectionFailed(CalibrationError):
    stage = "detect"

    def __init__(self, message, failures):
        super().__init__(message)
        self.failures = failures


@dataclass
class RunConfig:
    """Parsed run config. Unknown top-level sections are rejected."""

    scene: dict = field(default_factory=dict)
    detection: DetectionParams = field(default_factory=DetectionParams)
    optimize: OptimizeOptions = field(default_factory=OptimizeOptions)
    render: dict = field(default_factory=lambda: {"point_radius_px": 2.0, "colormap": "viridis", "marker_px": 8})
    initial_extrinsic: Pose | None = None
    ablation: dict = field(default_factory=lambda: {"fx_perturb": 0.01})
    consistency: dict = field(
        default_factory=lambda: {"groups": 3, "views": 40, "noise_px": 0.2, "trials": 100, "subset_size": 25, "refine": True}
    )
    seed: int = 0

    SECTIONS = ("scene", "detection", "optimize", "render", "initial_extrinsic", "ablation", "consistency", "seed")

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("run config must be a JSON object")
        extra = set(d) - set(cls.SECTIONS)
        if extra:
            raise ConfigError(f"unknown config sections: {sorted(extra)}")
        cfg = cls()
        try:
            cfg.scene = dict(d.get("scene", {}))
            if "detection" in d:
                cfg.detection = DetectionParams.from_dict(d["detection"])
            if "optimize" in d:
                cfg.optimize = OptimizeOptions.from_dict(d["optimize"])
            cfg.render.update(d.get("render", {}))
            if d.get("initial_extrinsic") is not None:
                cfg.initial_extrinsic = pose_from_config(d["initial_extrinsic"])
            cfg.ablation.update(d.get("ablation", {}))
            cfg.consistency.update(d.get("consistency", {}))
            cfg.seed = int(d.get("seed", 0))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad run config: {e}") from e
        if cfg.render["point_radius_px"] < 0:
            raise ConfigError("point_radius_px must be non-negative")
        return cfg

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        path = Path(path)
        if not path.is_file():
            raise InputMissing(f"config file {path} not found", stage="config")
        try:
            return cls.from_dict(io.read_json(path))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from e


def build_scene(cfg, seed):
    """SceneSpec from the ``scene`` section: a full scene document or preset options."""
    s = cfg.scene
    if "camera_truth" in s:
        scene = SceneSpec.from_dict(s)
        return scene.with_seed(seed)
    known = {"corner_noise_px", "range_noise_m", "frames", "reposition"}
    if set(s) - known:
        raise ConfigError(f"unknown scene options: {sorted(set(s) - known)}")
    return default_scene(
        corner_noise=float(s.get("corner_noise_px", 0.0)),
        range_noise=float(s.get("range_noise_m", 0.0)),
        seed=seed,
        frames=int(s.get("frames", 1)),
        reposition=bool(s.get("reposition", True)),
    )


# output helpers ------------------------------------------------------------


def _prepare_file(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _publish_dir(tmp, out):
    """Move a fully written temp directory into place."""
    out = Path(out)
    if out.exists():
        old = Path(tempfile.mkdtemp(dir=out.parent, prefix=out.name + ".old."))
        os.replace(out, old / "x")
        os.replace(tmp, out)
        shutil.rmtree(old)
    else:
        os.replace(tmp, out)


def _require(path, what, stage="io"):
    path = Path(path)
    if not path.exists():
        raise InputMissing(f"{what} {path} not found", stage=stage)
    return path


def _check_frames(frame_dir):
    """Validate a frame directory up front: observations plus matching clouds."""
    _require(frame_dir, "frame directory")
    try:
        docs = list_frames(frame_dir)
    except FileNotFoundError as e:
        raise InputMissing(str(e), stage="detect") from e
    for p in docs:
        _require(p.with_suffix(".ply"), "point cloud", stage="detect")
    return docs


def _read_json(path, what):
    try:
        return io.read_json(_require(path, what))
    except json.JSONDecodeError as e:
        raise io.FormatError(f"{path}: invalid JSON: {e}") from e


def _detected_entries(args, cfg):
    _check_frames(args.frames)
    if args.detections:
        doc = _read_json(args.detections, "detections file")
        entries, image_size = entries_from_detections(args.frames, doc["frames"])
        failures = list(doc.get("failures", []))
    else:
        entries, _, failures, image_size = detect_dir(args.frames, replace(cfg.detection, seed=args.seed))
    return entries, failures, image_size


def _with_detection_context(fn, failures):
    """Report too few detected boards as a detection failure rather than a solver one."""
    try:
        return fn()
    except InsufficientViews as e:
        if failures:
            raise DetectionFailed(str(e), failures) from e
        raise


# commands ------------------------------------------------------------------


def cmd_generate(args, cfg):
    scene = build_scene(cfg, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=out.parent, prefix=out.name + ".tmp."))
    try:
        for f in range(scene.frames):
            frame = simulate_frame(scene, f)
            stem = frame_stem(f)
            io.write_ply(tmp / f"{stem}.ply", frame.points, frame.intensity)
            io.write_json(tmp / f"{stem}.json", observations_doc(scene, frame))
        io.write_json(tmp / "truth.json", scene_truth(scene))
        os.chmod(tmp, 0o777 & ~io._umask())
        _publish_dir(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return {"frames": scene.frames, "boards": len(scene.boards)}


def cmd_detect(args, cfg):
    _check_frames(args.frames)
    _, doc, failures, _ = detect_dir(args.frames, replace(cfg.detection, seed=args.seed))
    io.write_json(_prepare_file(args.out), {"frames": doc, "failures": failures})
    if failures:
        raise DetectionFailed(f"{len(failures)} board(s) not detected", failures)
    return {"boards": sum(len(d["detections"]) for d in doc)}


def cmd_calibrate(args, cfg):
    entries, failures, image_size = _detected_entries(args, cfg)
    res = _with_detection_context(
        lambda: calibrate_entries(entries, image_size, cfg.optimize, cfg.initial_extrinsic, two_stage=args.two_stage),
        failures,
    )
    res.failures = failures
    io.write_json(_prepare_file(args.out), res.to_dict())
    return {"method": res.to_dict()["method"], "rms_px": res.report.rms}


def cmd_evaluate(args, cfg):
    result = _read_json(args.result, "result file")
    truth = _read_json(args.truth, "truth file")
    report = {"extrinsic": evaluate_extrinsic(result, truth)}
    if "camera" in result and "camera" in truth:
        report["camera"] = camera_errors(result["camera"], truth["camera"])
    if "rms_px" in result:
        report["rms_px"] = {result.get("method", "one-stage"): result["rms_px"]}
    io.write_json(_prepare_file(args.out), report)
    return report["extrinsic"]


def cmd_ablation(args, cfg):
    entries, failures, image_size = _detected_entries(args, cfg)
    fx_perturb = float(cfg.ablation.get("fx_perturb", 0.01))
    rep = _with_detection_context(
        lambda: ablation_study(entries, image_size, cfg.optimize, fx_perturb, cfg.initial_extrinsic), failures
    )
    rep["metadata"]["failures"] = failures
    io.write_json(_prepare_file(args.out), rep)
    return rep["cells"]


def cmd_consistency(args, cfg):
    c = cfg.consistency
    cam = CameraModel.from_dict(cfg.scene["camera_truth"]) if "camera_truth" in cfg.scene else default_camera()
    groups = [
        synth_view_group(cam, BoardSpec(), int(c["views"]), float(c["noise_px"]), seed=args.seed * 1000 + g)
        for g in range(int(c["groups"]))
    ]
    rep = consistency_study(
        groups,
        trials=int(c["trials"]),
        subset_size=int(c["subset_size"]),
        seed=args.seed,
        image_size=cam.image_size,
        refine=bool(c["refine"]),
        opts=cfg.optimize,
    )
    rep["noise_px"] = float(c["noise_px"])
    io.write_json(_prepare_file(args.out), rep)
    return {g["group"]: g["std"]["fx"] for g in rep["groups"]}


def cmd_render(args, cfg):
    docs = _check_frames(args.frames)
    result = _read_json(args.result, "result file")
    camera = CameraModel.from_dict(result["camera"])
    T = pose_from_config(result["T_lidar_camera"])
    if args.frame >= len(docs):
        raise ConfigError(f"frame {args.frame} out of range ({len(docs)} frames)")
    obs = io.read_json(docs[args.frame])
    points, inten = io.read_ply(docs[args.frame].with_suffix(".ply"))
    background = io.read_ppm(_require(args.background, "background image")) if args.background else None

    pairs = []
    if args.detections:
        det = _read_json(args.detections, "detections file")
        frame_idx = obs["frame_index"]
        poses = {(b["frame"], b["board_id"]): Pose.from_dict(b["pose_camera"]) for b in result.get("board_poses", [])}
        specs = {b["board_id"]: BoardSpec.from_dict(b["spec"]) for b in obs["boards"]}
        for fd in det["frames"]:
            if fd["frame_index"] != frame_idx:
                continue
            for d in fd["detections"]:
                pose = poses.get((frame_idx, d["board_id"]))
                if pose is None:
                    continue
                anchors = project(camera, pose, circle_centers(specs[d["board_id"]]))
                pairs += list(zip(np.asarray(d["circle_centers_3d"]), anchors))

    r = cfg.render
    img, skipped = render_overlay(
        points,
        inten,
        camera,
        T,
        image_size=tuple(obs["image_size"]),
        background=background,
        point_radius=float(r["point_radius_px"]),
        cmap=r["colormap"],
        pairs=pairs,
        marker_size=int(r["marker_px"]),
    )
    io.write_ppm(_prepare_file(args.out), img)
    return {"points": len(points), "skipped": skipped, "pairs": len(pairs)}


COMMANDS = {
    "generate": cmd_generate,
    "detect": cmd_detect,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "ablation": cmd_ablation,
    "consistency": cmd_consistency,
    "render": cmd_render,
}


def build_parser():
    p = argparse.ArgumentParser(prog="jointcalib", description="Joint camera / LiDAR calibration with a holed checkerboard.")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (overrides the config)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate frames: PLY cloud + observations JSON per frame, plus truth.json")
    g.add_argument("--out", required=True, help="output directory")

    d = sub.add_parser("detect", help="detect the boards in every frame's point cloud")
    d.add_argument("--frames", required=True)
    d.add_argument("--out", required=True)

    for name, text in (("calibrate", "run the full calibration"), ("ablation", "compare one- and two-stage solves")):
        c = sub.add_parser(name, help=text)
        c.add_argument("--frames", required=True)
        c.add_argument("--detections", help="reuse a detections file instead of re-detecting")
        c.add_argument("--out", required=True)
        if name == "calibrate":
            c.add_argument("--two-stage", action="store_true", help="intrinsics first, then the extrinsic alone")

    e = sub.add_parser("evaluate", help="compare a calibration result with the truth file")
    e.add_argument("--result", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--out", required=True)

    s = sub.add_parser("consistency", help="intrinsic spread over random view subsets")
    s.add_argument("--out", required=True)

    r = sub.add_parser("render", help="project a frame's cloud into the image as a PPM")
    r.add_argument("--frames", required=True)
    r.add_argument("--result", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--frame", type=int, default=0)
    r.add_argument("--detections", help="draw hole-center rings and crosses from this detections file")
    r.add_argument("--background", help="PPM drawn under the overlay")
    return p


def _failure(exc, code):
    doc = {
        "error": type(exc).__name__,
        "stage": getattr(exc, "stage", "io"),
        "message": str(exc),
        "exit_code": code,
    }
    if isinstance(exc, DetectionFailed):
        doc["failures"] = exc.failures
    sys.stderr.write(io.dumps(doc))
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        if args.seed is None:
            args.seed = cfg.seed
        if args.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        summary = COMMANDS[args.command](args, cfg)
    except CalibrationError as e:
        return _failure(e, _STAGE_EXIT.get(e.stage, EXIT_OPTIMIZE) if not isinstance(e, InputMissing) else EXIT_IO)
    except (FileNotFoundError, PermissionError, IsADirectoryError) as e:
        return _failure(e, EXIT_IO)
    sys.stdout.write(io.dumps(summary))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
