"""Synthetic ground-truth scenes: noisy corner detections and a ray-cast spin LiDAR."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .board import BoardSpec, circle_centers, corner_points, in_any_hole, on_board, square_color
from .errors import BoardNotVisible, SceneError
from .geometry import CameraModel, Pose, project, rotation_from_rpy

EULER_CONVENTION = "intrinsic-xyz"  # R = Rx(roll) Ry(pitch) Rz(yaw)

# corner / lidar noise streams per frame
_STREAM_CORNERS = 0
_STREAM_LIDAR = 1


def frame_rng(seed, frame, stream):
    """Independent generator per (seed, frame, stream); order of use is irrelevant."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(frame), int(stream))))


@dataclass
class LidarSpec:
    azimuth_res_deg: float = 0.2
    elevations_deg: tuple = tuple(np.linspace(-16.0, 16.0, 64).tolist())
    range_noise: float = 0.0  # meters, 1-sigma along the ray
    max_range: float = 120.0

    def to_dict(self):
        return {
            "azimuth_res_deg": self.azimuth_res_deg,
            "elevations_deg": list(self.elevations_deg),
            "range_noise_m": self.range_noise,
            "max_range_m": self.max_range,
        }

    @classmethod
    def from_dict(cls, d):
        elev = d.get("elevations_deg")
        if elev is None and "channels" in d:
            lo, hi = d.get("elevation_range_deg", (-16.0, 16.0))
            elev = np.linspace(lo, hi, int(d["channels"])).tolist()
        return cls(
            azimuth_res_deg=float(d.get("azimuth_res_deg", 0.2)),
            elevations_deg=tuple(elev) if elev is not None else cls().elevations_deg,
            range_noise=float(d.get("range_noise_m", 0.0)),
            max_range=float(d.get("max_range_m", 120.0)),
        )


@dataclass
class SceneSpec:
    camera_truth: CameraModel
    T_lidar_camera_truth: Pose
    boards: list  # [(BoardSpec, Pose board -> lidar)]
    lidar: LidarSpec = field(default_factory=LidarSpec)
    corner_noise: float = 0.0  # pixels, 1-sigma per axis
    rng_seed: int = 0
    frames: int = 1
    ground_plane: tuple | None = None  # (normal, offset) with n.p + d = 0, lidar frame
    detection: dict = field(default_factory=dict)  # priors handed to the detector
    frame_poses: list | None = None  # per frame, board -> lidar poses; None = static boards

    def __post_init__(self):
        if self.corner_noise < 0 or self.lidar.range_noise < 0:
            raise SceneError("noise levels must be non-negative")
        if self.camera_truth.image_size is None:
            raise SceneError("camera_truth needs an image_size")
        if not self.boards:
            raise SceneError("scene has no boards")
        if self.frames < 1:
            raise SceneError("frames must be >= 1")
        if self.frame_poses is not None:
            if len(self.frame_poses) != self.frames:
                raise SceneError("frame_poses needs one layout per frame")
            if any(len(fp) != len(self.boards) for fp in self.frame_poses):
                raise SceneError("every layout needs one pose per board")

    @property
    def image_size(self):
        return self.camera_truth.image_size

    def layout(self, frame=0):
        """``[(BoardSpec, Pose board -> lidar)]`` for one frame."""
        if self.frame_poses is None:
            return list(self.boards)
        return [(spec, pose) for (spec, _), pose in zip(self.boards, self.frame_poses[frame])]

    def board_pose_camera(self, i, frame=0):
        return self.T_lidar_camera_truth.compose(self.layout(frame)[i][1])

    def with_seed(self, seed):
        d = self.to_dict()
        d["rng_seed"] = int(seed)
        return SceneSpec.from_dict(d)

    def to_dict(self):
        return {
            "camera_truth": self.camera_truth.to_dict(),
            "T_lidar_camera_truth": self.T_lidar_camera_truth.to_dict(),
            "boards": [{"spec": s.to_dict(), "pose_lidar": p.to_dict()} for s, p in self.boards],
            "lidar": self.lidar.to_dict(),
            "corner_noise_px": self.corner_noise,
            "rng_seed": self.rng_seed,
            "frames": self.frames,
            "ground_plane": (
                {"normal": list(self.ground_plane[0]), "offset": self.ground_plane[1]}
                if self.ground_plane
                else None
            ),
            "detection": self.detection,
            "frame_poses": (
                None
                if self.frame_poses is None
                else [[{"pose_lidar": p.to_dict()} for p in fp] for fp in self.frame_poses]
            ),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            camera = CameraModel.from_dict(d["camera_truth"])
            T = pose_from_config(d["T_lidar_camera_truth"])
            boards = []
            for b in d["boards"]:
                spec = BoardSpec.from_dict(b["spec"]) if "spec" in b else BoardSpec()
                boards.append((spec, _board_pose_from_config(b, T)))
            gp = d.get("ground_plane")
            fps = d.get("frame_poses")
            if fps is not None:
                fps = [[_board_pose_from_config(b, T) for b in fp] for fp in fps]
            return cls(
                camera_truth=camera,
                T_lidar_camera_truth=T,
                boards=boards,
                lidar=LidarSpec.from_dict(d.get("lidar", {})),
                corner_noise=float(d.get("corner_noise_px", 0.0)),
                rng_seed=int(d.get("rng_seed", 0)),
                frames=int(d.get("frames", 1)),
                ground_plane=(tuple(gp["normal"]), float(gp["offset"])) if gp else None,
                detection=d.get("detection", {}),
                frame_poses=fps,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SceneError(f"bad scene config: {e!r}") from e


def _board_pose_from_config(b, T):
    if "pose_lidar" in b:
        return pose_from_config(b["pose_lidar"])
    return T.inverse().compose(pose_from_config(b["pose_camera"]))


def pose_from_config(d):
    """Accept ``{"r", "t"}`` or ``{"rpy_deg", "t"}`` (intrinsic x-y'-z'')."""
    if "rpy_deg" in d:
        return Pose.from_matrix(rotation_from_rpy(*d["rpy_deg"]), d["t"])
    return Pose.from_dict(d)


@dataclass
class SimFrame:
    points: np.ndarray  # (N, 3) lidar frame
    intensity: np.ndarray  # (N,)
    labels: np.ndarray  # (N,) board index, -1 ground; truth only, never read by detection
    corner_obs: list  # per board: {"board": (C, 3), "pixels": (C, 2), "dropped": [...]}
    truth: dict
    frame_index: int = 0


def simulate_corners(scene, frame_index=0):
    rng = frame_rng(scene.rng_seed, frame_index, _STREAM_CORNERS)
    w, h = scene.image_size
    out = []
    for i, (spec, _) in enumerate(scene.boards):
        obj = corner_points(spec)
        exact = project(scene.camera_truth, scene.board_pose_camera(i, frame_index), obj)
        noise = rng.normal(0.0, 1.0, size=exact.shape) * scene.corner_noise
        pix = exact + noise
        keep = (pix[:, 0] >= 0) & (pix[:, 0] <= w) & (pix[:, 1] >= 0) & (pix[:, 1] <= h)
        if keep.sum() < 4:
            raise BoardNotVisible(f"board {i}: only {int(keep.sum())} corners inside the image")
        out.append(
            {
                "board": obj[keep],
                "pixels": pix[keep],
                "dropped": np.flatnonzero(~keep).tolist(),
            }
        )
    return out


def ray_directions(lidar):
    az = np.radians(np.arange(0.0, 360.0, lidar.azimuth_res_deg))
    el = np.radians(np.asarray(lidar.elevations_deg, dtype=float))
    A, E = np.meshgrid(az, el, indexing="ij")  # azimuth-major, like a spinning head
    d = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1)
    channel = np.broadcast_to(np.arange(len(el)), A.shape)
    return d.reshape(-1, 3), channel.ravel()


def _board_hits(spec, pose, dirs):
    """Range along each ray to the board face, inf where the ray misses."""
    R = pose.R
    n = R[:, 2]
    denom = dirs @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (n @ pose.t) / denom
    ok = np.isfinite(s) & (s > 0)
    s = np.where(ok, s, np.inf)
    q = (dirs * np.where(ok, s, 0.0)[:, None] - pose.t) @ R  # board frame
    ok &= on_board(spec, q[:, :2]) & ~in_any_hole(spec, q[:, :2])
    return np.where(ok, s, np.inf), q


def simulate_lidar(scene, frame_index=0):
    """Ray-cast every (azimuth, elevation) beam against the boards (nearest hit)."""
    dirs, channel = ray_directions(scene.lidar)
    best = np.full(len(dirs), np.inf)
    label = np.full(len(dirs), -2)
    inten = np.zeros(len(dirs))
    for i, (spec, pose) in enumerate(scene.layout(frame_index)):
        s, q = _board_hits(spec, pose, dirs)
        closer = s < best
        best[closer] = s[closer]
        label[closer] = i
        color = square_color(spec, q[:, :2])
        inten[closer] = np.select([color == 1, color == 0], [1.0, 0.1], 0.5)[closer]
    if scene.ground_plane is not None:
        gn, gd = np.asarray(scene.ground_plane[0], dtype=float), scene.ground_plane[1]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = -gd / (dirs @ gn)
        s = np.where(np.isfinite(s) & (s > 0), s, np.inf)
        closer = s < best
        best[closer] = s[closer]
        label[closer] = -1
        inten[closer] = 0.3

    rng = frame_rng(scene.rng_seed, frame_index, _STREAM_LIDAR)
    noise = rng.normal(0.0, 1.0, size=len(dirs)) * scene.lidar.range_noise
    hit = np.isfinite(best) & (best <= scene.lidar.max_range)
    rng_m = best + noise
    points = dirs[hit] * rng_m[hit, None]
    return points, inten[hit], label[hit], channel[hit]


def check_scene(scene):
    """Raise SceneError unless every board is in front of the camera and crossed by >= 3 channels."""
    dirs, channel = ray_directions(scene.lidar)
    for f in range(scene.frames if scene.frame_poses is not None else 1):
        for i, (spec, pose) in enumerate(scene.layout(f)):
            pc = scene.board_pose_camera(i, f).apply(np.vstack([corner_points(spec), circle_centers(spec)]))
            if np.any(pc[:, 2] <= 0):
                raise SceneError(f"frame {f}, board {i} is not in front of the camera")
            s, _ = _board_hits(spec, pose, dirs)
            n_ch = len(np.unique(channel[np.isfinite(s)]))
            if n_ch < 3:
                raise SceneError(f"frame {f}, board {i} is crossed by {n_ch} LiDAR channels (need >= 3)")


def scene_truth(scene):
    """Ground truth shared by every noise seed: camera, extrinsic and per-frame boards."""
    frames = []
    for f in range(scene.frames):
        boards = []
        for i, (spec, pose) in enumerate(scene.layout(f)):
            boards.append(
                {
                    "spec": spec.to_dict(),
                    "pose_lidar": pose.to_dict(),
                    "pose_camera": scene.board_pose_camera(i, f).to_dict(),
                    "circle_centers_lidar": pose.apply(circle_centers(spec)).tolist(),
                }
            )
        frames.append({"frame_index": f, "boards": boards})
    return {
        "convention": EULER_CONVENTION,
        "camera": scene.camera_truth.to_dict(),
        "T_lidar_camera": scene.T_lidar_camera_truth.to_dict(),
        "frames": frames,
    }


def simulate_frame(scene, frame_index=0):
    check_scene(scene)
    corners = simulate_corners(scene, frame_index)
    points, inten, labels, _ = simulate_lidar(scene, frame_index)
    return SimFrame(points, inten, labels, corners, scene_truth(scene), frame_index)


def detection_priors(scene, frame=0, roi_half_size=0.8):
    """Per-board ROI box and expected normal, as an operator would preset them."""
    priors = []
    for spec, pose in scene.layout(frame):
        c = pose.t
        priors.append(
            {
                "roi_min": (c - roi_half_size).tolist(),
                "roi_max": (c + roi_half_size).tolist(),
                "expected_normal": np.round(pose.R[:, 2], 1).tolist(),
            }
        )
    return priors


def frame_priors(scene, frame):
    """Detector priors for one frame: explicit per-frame list, shared list, or derived boxes."""
    det = scene.detection
    if "frames" in det:
        return det["frames"][frame]
    if "boards" in det:
        return det["boards"]
    return detection_priors(scene, frame, det.get("roi_half_size", 0.8))


# The reference scenario: extrinsic of the simulated quantitative evaluation,
# six boards arranged in two rows in front of the camera.
REFERENCE_T_LC = {"rpy_deg": [-90.0, 0.0, 90.0], "t": [0.0, 0.595, 2.5]}


def default_camera():
    return CameraModel(1660.0, 1655.0, 962.0, 538.0, dist=(-0.12, 0.05, 0.0008, -0.0005), image_size=(1920, 1080))


def _board_in_camera(center, tilt_x, tilt_y, roll):
    # board x -> camera x, board y -> camera -y (up), board z -> camera -z (toward camera)
    R0 = np.diag([1.0, -1.0, -1.0])
    R = R0 @ rotation_from_rpy(tilt_x, tilt_y, roll)
    return Pose.from_matrix(R, center)


DEFAULT_LAYOUT = (
    # camera-frame center, tilt about board x, tilt about board y, in-plane roll (deg).
    # The near row sits below the LiDAR horizon and the far row above it, so no
    # board shadows another in the scan.
    ((-2.2, 1.12, 6.5), -12.0, 28.0, 4.0),
    ((0.0, 1.12, 6.5), 18.0, 8.0, -3.0),
    ((2.2, 1.12, 6.5), -8.0, -30.0, 2.0),
    ((-2.6, -0.03, 8.5), 16.0, 25.0, -4.0),
    ((0.0, -0.03, 8.5), -20.0, -6.0, 3.0),
    ((2.6, -0.03, 8.5), 10.0, -24.0, -2.0),
)


def jittered_layout(frame, layout=DEFAULT_LAYOUT):
    """Layout for frame ``frame``: the reference layout re-posed as an operator would between captures.

    Frame 0 is the reference itself. The jitter depends only on the frame
    index, so every noise seed shares the same ground truth.
    """
    if frame == 0:
        return layout
    rng = np.random.default_rng(np.random.SeedSequence(_LAYOUT_SEED, spawn_key=(int(frame),)))
    out = []
    for c, tx, ty, rl in layout:
        dc = rng.uniform([-0.15, -0.05, -0.3], [0.15, 0.05, 0.3])
        dt = rng.uniform(-10.0, 10.0, size=2)
        out.append((tuple(np.add(c, dc)), tx + dt[0], ty + dt[1], rl + rng.uniform(-3.0, 3.0)))
    return tuple(out)


_LAYOUT_SEED = 20240


def default_scene(corner_noise=0.0, range_noise=0.0, seed=0, camera=None, spec=None, frames=1, reposition=True):
    """Reference six-board scene; with ``reposition`` each extra frame re-poses the boards."""
    camera = camera or default_camera()
    spec = spec or BoardSpec()
    T = pose_from_config(REFERENCE_T_LC)
    Tinv = T.inverse()

    def lidar_poses(layout):
        return [Tinv.compose(_board_in_camera(c, tx, ty, rl)) for c, tx, ty, rl in layout]

    boards = [(spec, p) for p in lidar_poses(DEFAULT_LAYOUT)]
    frame_poses = None
    if frames > 1 and reposition:
        frame_poses = [lidar_poses(jittered_layout(f)) for f in range(frames)]
    scene = SceneSpec(
        camera_truth=camera,
        T_lidar_camera_truth=T,
        boards=boards,
        lidar=LidarSpec(range_noise=range_noise),
        corner_noise=corner_noise,
        rng_seed=seed,
        frames=frames,
        frame_poses=frame_poses,
    )
    # camera "up" (-y) seen from the lidar, used as the in-plane yaw reference
    scene.detection = {
        "up": np.round(T.R.T @ np.array([0.0, -1.0, 0.0]), 6).tolist(),
        "frames": [detection_priors(scene, f, roi_half_size=0.8) for f in range(frames)],
    }
    return scene
