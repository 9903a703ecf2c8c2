"""End-to-end calibration: detections and corners in, calibrated parameters out.

Order of work:

1. closed-form intrinsics and board poses from the checkerboard corners;
2. corner-only refinement of intrinsics, distortion and poses;
3. hole-center anchors projected once from that calibration and frozen;
4. initial extrinsic from the config, or a rigid fit of LiDAR hole centers to
   the camera-frame hole centers;
5. joint (or two-stage) least squares.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io
from .board import BoardSpec, circle_centers
from .detect import DetectionParams, detect_boards
from .errors import DetectionError, InitializationError, InsufficientViews
from .geometry import Pose
from .optimize import (
    BoardPairs,
    OptimizeOptions,
    ParameterBlock,
    PointPairSet,
    compute_circle_centers_2d,
    refine_intrinsics,
    solve,
    solve_two_stage,
)
from .simulate import EULER_CONVENTION, frame_priors
from .zhang import initialize


@dataclass
class BoardEntry:
    """Everything measured about one board in one frame."""

    frame: int
    board_id: int
    spec: BoardSpec
    corner_board: np.ndarray
    corner_pixels: np.ndarray
    circle_lidar: np.ndarray | None = None  # (4, 3), None until detected


@dataclass
class Prepared:
    initial: ParameterBlock
    pairs: PointPairSet
    entries: list
    zhang_camera: object
    refine_iterations: int
    extrinsic_source: str


@dataclass
class CalibrationResult:
    report: object  # OptimizeReport
    prepared: Prepared
    two_stage: bool = False
    failures: list = field(default_factory=list)

    def to_dict(self):
        p = self.report.params
        return {
            "convention": EULER_CONVENTION,
            "method": "two-stage" if self.two_stage else "one-stage",
            "camera": p.camera.to_dict(),
            "T_lidar_camera": p.T_lidar_camera.to_dict(),
            "board_poses": [
                {"frame": e.frame, "board_id": e.board_id, "pose_camera": bp.to_dict()}
                for e, bp in zip(self.prepared.entries, p.board_poses)
            ],
            "rms_px": dict(self.report.rms),
            "optimizer": {
                "iterations": self.report.iterations,
                "converged": self.report.converged,
                "reason": self.report.reason,
                "final_cost": self.report.final_cost,
                "trace": list(self.report.trace),
            },
            "initial": {
                "zhang_camera": self.prepared.zhang_camera.to_dict(),
                "refined_camera": self.prepared.initial.camera.to_dict(),
                "T_lidar_camera": self.prepared.initial.T_lidar_camera.to_dict(),
                "extrinsic_source": self.prepared.extrinsic_source,
                "corner_refine_iterations": self.prepared.refine_iterations,
            },
            "failures": list(self.failures),
        }


def kabsch(src, dst):
    """Rigid transform with ``dst ~ R src + t`` in the least-squares sense."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if len(src) < 3:
        raise InitializationError("need at least 3 points for a rigid fit")
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    U, _, Vt = np.linalg.svd((src - cs).T @ (dst - cd))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return Pose.from_matrix(R, cd - R @ cs)


def initialize_camera(entries, image_size, opts=None, fx_scale=1.0):
    """Closed-form start plus corner-only refinement.

    ``fx_scale`` multiplies the closed-form fx before refinement, to study
    sensitivity to the starting intrinsics.
    """
    opts = opts or OptimizeOptions()
    views = [(e.corner_board, e.corner_pixels) for e in entries]
    init = initialize(views, image_size)
    start = replace(init.camera, fx=init.camera.fx * fx_scale)
    camera, poses, lm = refine_intrinsics(start, init.board_poses, views, opts)
    return init.camera, camera, poses, lm


def prepare(entries, image_size, opts=None, initial_extrinsic=None, fx_scale=1.0):
    """Build the initial ParameterBlock and the frozen-anchor PointPairSet."""
    opts = opts or OptimizeOptions()
    entries = [e for e in entries if e.circle_lidar is not None]
    if len(entries) < 3:
        raise InsufficientViews(f"need at least 3 boards with LiDAR detections, got {len(entries)}")
    zhang_cam, camera, poses, lm = initialize_camera(entries, image_size, opts, fx_scale)

    boards = []
    for k, (e, pose) in enumerate(zip(entries, poses)):
        anchors = compute_circle_centers_2d(camera, pose, e.spec)
        boards.append(
            BoardPairs(e.circle_lidar, circle_centers(e.spec), anchors, e.corner_board, e.corner_pixels, board_id=k)
        )
    pairs = PointPairSet(boards)

    if initial_extrinsic is not None:
        T0, source = initial_extrinsic, "config"
    else:
        lidar = np.vstack([e.circle_lidar for e in entries])
        cam = np.vstack([p.apply(circle_centers(e.spec)) for e, p in zip(entries, poses)])
        T0, source = kabsch(lidar, cam), "rigid-fit"
    initial = ParameterBlock(camera, T0, list(poses))
    return Prepared(initial, pairs, entries, zhang_cam, lm.iterations, source)


def calibrate_entries(entries, image_size, opts=None, initial_extrinsic=None, two_stage=False, fx_scale=1.0):
    opts = opts or OptimizeOptions()
    prep = prepare(entries, image_size, opts, initial_extrinsic, fx_scale)
    report = (solve_two_stage if two_stage else solve)(prep.initial, prep.pairs, opts)
    return CalibrationResult(report, prep, two_stage)


# frame files ---------------------------------------------------------------


def frame_stem(i):
    return f"frame_{i:04d}"


def observations_doc(scene, frame):
    """JSON document holding one frame's corner detections and detector priors."""
    priors = frame_priors(scene, frame.frame_index)
    boards = []
    for i, ((spec, _), obs) in enumerate(zip(scene.boards, frame.corner_obs)):
        b = {
            "board_id": i,
            "spec": spec.to_dict(),
            "corners": {"board": obs["board"], "pixels": obs["pixels"]},
        }
        if i < len(priors):
            b["detection"] = priors[i]
        boards.append(b)
    return {
        "frame_index": frame.frame_index,
        "image_size": list(scene.image_size),
        "up": scene.detection.get("up", [0.0, 0.0, 1.0]),
        "boards": boards,
    }


def list_frames(frame_dir):
    frame_dir = Path(frame_dir)
    docs = sorted(frame_dir.glob("frame_*.json"))
    if not docs:
        raise FileNotFoundError(f"no frame_*.json files in {frame_dir}")
    return docs


def detect_frame(points, obs, base=None):
    """Run the detector on one frame with the per-board priors stored in ``obs``."""
    base = base or DetectionParams()
    boards = []
    for b in obs["boards"]:
        pri = b.get("detection")
        if pri is None:
            raise DetectionError(f"board {b['board_id']}: no detection priors")
        params = replace(
            base,
            roi_min=tuple(pri["roi_min"]),
            roi_max=tuple(pri["roi_max"]),
            expected_normal=tuple(pri["expected_normal"]),
            up=tuple(obs.get("up", base.up)),
        )
        boards.append((b["board_id"], BoardSpec.from_dict(b["spec"]), params))
    return detect_boards(points, boards)


def entries_from_frame(obs, detections):
    by_id = {d.board_id: d for d in detections}
    out = []
    for b in obs["boards"]:
        det = by_id.get(b["board_id"])
        out.append(
            BoardEntry(
                frame=int(obs["frame_index"]),
                board_id=int(b["board_id"]),
                spec=BoardSpec.from_dict(b["spec"]),
                corner_board=np.asarray(b["corners"]["board"], dtype=float),
                corner_pixels=np.asarray(b["corners"]["pixels"], dtype=float),
                circle_lidar=None if det is None else det.circle_centers_3d,
            )
        )
    return out


def detect_dir(frame_dir, base=None):
    """Detect every frame in ``frame_dir``; returns ``(entries, detections_doc, failures, image_size)``."""
    entries, doc, failures, image_size = [], [], [], None
    for path in list_frames(frame_dir):
        obs = io.read_json(path)
        image_size = tuple(obs["image_size"])
        ply = path.with_suffix(".ply")
        if not ply.exists():
            raise FileNotFoundError(f"missing point cloud {ply}")
        points, _ = io.read_ply(ply)
        dets, fails = detect_frame(points, obs, base)
        for f in fails:
            f["frame"] = obs["frame_index"]
        failures += fails
        doc.append({"frame_index": obs["frame_index"], "detections": [d.to_dict() for d in dets]})
        entries += entries_from_frame(obs, dets)
    return entries, doc, failures, image_size


def entries_from_detections(frame_dir, detections_doc):
    """Rebuild entries from frame files plus a saved detections document."""
    from .detect import BoardDetection

    by_frame = {d["frame_index"]: [BoardDetection.from_dict(x) for x in d["detections"]] for d in detections_doc}
    entries, image_size = [], None
    for path in list_frames(frame_dir):
        obs = io.read_json(path)
        image_size = tuple(obs["image_size"])
        entries += entries_from_frame(obs, by_frame.get(obs["frame_index"], []))
    return entries, image_size



def entries_from_scene(scene, detect=True, base=None):
    """Simulate every frame of ``scene`` and build entries.

    With ``detect`` the LiDAR hole centers come from the detector; otherwise the
    exact simulated centers are used. Returns ``(entries, failures)``.
    """
    from .simulate import simulate_frame

    entries, failures = [], []
    for f in range(scene.frames):
        frame = simulate_frame(scene, f)
        obs = observations_doc(scene, frame)
        if detect:
            dets, fails = detect_frame(frame.points, obs, base)
            for x in fails:
                x["frame"] = f
            failures += fails
            entries += entries_from_frame(obs, dets)
        else:
            exact = frame.truth["frames"][f]["boards"]
            for e in entries_from_frame(obs, []):
                e.circle_lidar = np.asarray(exact[e.board_id]["circle_centers_lidar"], dtype=float)
                entries.append(e)
    return entries, failures
