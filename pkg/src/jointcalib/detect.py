"""Locate the four hole centers of each board in a raw LiDAR cloud.

Per board: crop to a preset box, segment the board plane with an
orientation-constrained RANSAC, then slide the board's hole mask over the
in-plane points (yaw, x, y) until the fewest returns fall inside the holes.
Only point coordinates are used; intensity and ring ids are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .board import BoardSpec, MaskCloud, make_mask
from .errors import CalibrationError, DegenerateTarget, DetectionError, EmptyROI, NoValidPlane
from .geometry import Pose

MIN_ROI_POINTS = 100
MIN_POINTS_PER_HOLE = 10


@dataclass
class DetectionParams:
    roi_min: tuple = (-np.inf, -np.inf, -np.inf)
    roi_max: tuple = (np.inf, np.inf, np.inf)
    ransac_iters: int = 500
    ransac_thresh: float = 0.012
    expected_normal: tuple = (1.0, 0.0, 0.0)
    max_angle_deg: float = 30.0
    min_inlier_ratio: float = 0.5
    up: tuple = (0.0, 0.0, 1.0)  # board "up" direction in the LiDAR frame
    yaw_range_deg: float = 10.0
    yaw_step_deg: float = 2.0
    xy_range: float = 0.1
    xy_step: float = 0.02
    refine_levels: int = 3
    seed: int = 0

    def __post_init__(self):
        if min(self.yaw_step_deg, self.xy_step, self.yaw_range_deg, self.xy_range) <= 0:
            raise ValueError("grid ranges and steps must be positive")
        if not 0 < self.max_angle_deg <= 90:
            raise ValueError("max_angle_deg must lie in (0, 90]")
        if self.ransac_thresh <= 0 or self.ransac_iters < 1:
            raise ValueError("bad RANSAC settings")
        if self.refine_levels < 0:
            raise ValueError("refine_levels must be non-negative")
        n = np.asarray(self.expected_normal, dtype=float)
        if not np.isfinite(n).all() or np.linalg.norm(n) == 0:
            raise ValueError("expected_normal must be a nonzero vector")

    def to_dict(self):
        d = dict(self.__dict__)
        for k in ("roi_min", "roi_max", "expected_normal", "up"):
            d[k] = [float(v) if np.isfinite(v) else None for v in d[k]]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k, fill in (("roi_min", -np.inf), ("roi_max", np.inf)):
            if k in d:
                d[k] = tuple(fill if v is None else float(v) for v in d[k])
        for k in ("expected_normal", "up"):
            if k in d:
                d[k] = tuple(float(v) for v in d[k])
        return cls(**d)


@dataclass
class AlignResult:
    yaw: float  # radians
    x: float
    y: float
    cost: int
    level_costs: list = field(default_factory=list)  # best cost after each level
    evaluated: list = field(default_factory=list)  # per level: (yaws, xs, ys, costs)


@dataclass
class BoardDetection:
    board_id: int
    normal: np.ndarray
    d: float
    board_pose_in_lidar: Pose
    circle_centers_3d: np.ndarray  # (4, 3) canonical hole order
    alignment_cost: int
    inlier_count: int
    alignment: AlignResult | None = None

    def to_dict(self):
        return {
            "board_id": self.board_id,
            "plane": {"normal": self.normal.tolist(), "d": self.d},
            "board_pose_in_lidar": self.board_pose_in_lidar.to_dict(),
            "circle_centers_3d": self.circle_centers_3d.tolist(),
            "alignment_cost": int(self.alignment_cost),
            "inlier_count": int(self.inlier_count),
            "alignment": None
            if self.alignment is None
            else {"yaw_rad": self.alignment.yaw, "x_m": self.alignment.x, "y_m": self.alignment.y},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            board_id=d["board_id"],
            normal=np.asarray(d["plane"]["normal"], dtype=float),
            d=float(d["plane"]["d"]),
            board_pose_in_lidar=Pose.from_dict(d["board_pose_in_lidar"]),
            circle_centers_3d=np.asarray(d["circle_centers_3d"], dtype=float),
            alignment_cost=int(d["alignment_cost"]),
            inlier_count=int(d["inlier_count"]),
        )


def roi_filter(points, params):
    """Points strictly inside the ROI box."""
    points = np.asarray(points, dtype=float)
    lo, hi = np.asarray(params.roi_min, dtype=float), np.asarray(params.roi_max, dtype=float)
    keep = np.all((points > lo) & (points < hi), axis=1)
    if keep.sum() < MIN_ROI_POINTS:
        raise EmptyROI(f"{int(keep.sum())} points in the ROI (need {MIN_ROI_POINTS})")
    return points[keep]


def _fit_plane(points):
    c = points.mean(axis=0)
    _, _, Vt = np.linalg.svd(points - c, full_matrices=False)
    n = Vt[-1]
    return n, -float(n @ c)


def ransac_plane(points, params, rng=None):
    """Orientation-constrained RANSAC plane, refit to its inliers by total least squares.

    Returns ``(normal, d, inlier_mask)`` with ``normal . p + d = 0`` and the
    normal pointing toward the sensor origin (``d > 0``).
    """
    points = np.asarray(points, dtype=float)
    n_pts = len(points)
    if n_pts < 3:
        raise NoValidPlane("need at least 3 points")
    rng = rng if rng is not None else np.random.default_rng(params.seed)
    e = np.asarray(params.expected_normal, dtype=float)
    e = e / np.linalg.norm(e)
    cos_max = np.cos(np.radians(params.max_angle_deg))

    best_count, best_mask = 0, None
    for _ in range(params.ransac_iters):
        i, j, k = rng.choice(n_pts, 3, replace=False)
        n = np.cross(points[j] - points[i], points[k] - points[i])
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            continue
        n /= norm
        if abs(n @ e) < cos_max:
            continue
        mask = np.abs(points @ n - n @ points[i]) < params.ransac_thresh
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask
    if best_mask is None or best_count < params.min_inlier_ratio * n_pts:
        raise NoValidPlane(
            f"best plane holds {best_count}/{n_pts} points within the orientation constraint"
        )

    n, d = _fit_plane(points[best_mask])
    mask = np.abs(points @ n + d) < params.ransac_thresh
    if mask.sum() >= 3:
        n, d = _fit_plane(points[mask])
        mask = np.abs(points @ n + d) < params.ransac_thresh
    if d < 0:
        n, d = -n, -d
    if abs(n @ e) < cos_max:
        raise NoValidPlane("refit plane violates the orientation constraint")
    if mask.sum() < params.min_inlier_ratio * n_pts:
        raise NoValidPlane("too few inliers after refit")
    return n, float(d), mask


@dataclass
class PlaneFrame:
    origin: np.ndarray
    u: np.ndarray  # in-plane x (board right at yaw 0)
    v: np.ndarray  # in-plane y (board up at yaw 0)
    n: np.ndarray

    def to_plane(self, points):
        rel = np.asarray(points, dtype=float) - self.origin
        return np.column_stack([rel @ self.u, rel @ self.v])

    def lift(self, xy):
        xy = np.asarray(xy, dtype=float)
        return self.origin + xy[..., :1] * self.u + xy[..., 1:2] * self.v


def plane_frame(n, d, inliers, up):
    """2D frame on the plane: origin at the projected inlier centroid, v along ``up``."""
    c = inliers.mean(axis=0)
    origin = c - (n @ c + d) * n
    up = np.asarray(up, dtype=float)
    v = up - (up @ n) * n
    if np.linalg.norm(v) < 1e-6:
        raise DegenerateTarget("board normal is parallel to the configured up direction")
    v /= np.linalg.norm(v)
    u = np.cross(v, n)
    return PlaneFrame(origin, u, v, n)


def _rot2(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s], [s, c]])


def _grid(center, half_range, step):
    k = int(round(half_range / step))
    return center + step * np.arange(-k, k + 1)


def hole_cost_grid(target_xy, holes, radius, yaws, xs, ys):
    """Hole-occupancy count for every (yaw, x, y) cell, shape (len(yaws), len(xs), len(ys)).

    A target point p falls in hole h under the cell iff
    ``|p - R(yaw) (h + t)| < r``, evaluated as ``|R(yaw)^T p - t - h| < r``.
    """
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    t = np.column_stack([X.ravel(), Y.ravel()])  # (G, 2)
    out = np.empty((len(yaws), len(xs) * len(ys)), dtype=np.int64)
    r2 = radius * radius
    for a, yaw in enumerate(yaws):
        q = target_xy @ _rot2(yaw)  # rows are R^T p
        inside = np.zeros((len(q), len(t)), dtype=bool)
        for h in holes:
            dx = q[:, None, 0] - t[None, :, 0] - h[0]
            dy = q[:, None, 1] - t[None, :, 1] - h[1]
            inside |= dx * dx + dy * dy < r2
        out[a] = inside.sum(axis=0)
    return out.reshape(len(yaws), len(xs), len(ys))


def _pick(costs, yaws, xs, ys):
    """Global minimum; ties go to the smallest |(x, y)|, then |yaw|, then lexicographic."""
    Yw, X, Y = np.meshgrid(yaws, xs, ys, indexing="ij")
    c = costs.ravel()
    cand = np.flatnonzero(c == c.min())
    xc, yc, wc = X.ravel()[cand], Y.ravel()[cand], Yw.ravel()[cand]
    order = np.lexsort((wc, yc, xc, np.abs(wc), xc * xc + yc * yc))
    k = cand[order[0]]
    return float(Yw.ravel()[k]), float(X.ravel()[k]), float(Y.ravel()[k]), int(c[k])


def grid_search_align(target_xy, mask, params):
    """Coarse grid over (yaw, x, y) plus ``refine_levels`` local refinements.

    Each refinement halves the step and searches +-2 previous steps around the
    incumbent, which is always re-evaluated, so the cost never increases.
    """
    target_xy = np.asarray(target_xy, dtype=float)[:, :2]
    holes = np.asarray(mask.hole_centers, dtype=float)
    r = mask.hole_radius
    if len(target_xy) < len(holes) * MIN_POINTS_PER_HOLE:
        raise DegenerateTarget(f"only {len(target_xy)} target points")

    yaw_step = np.radians(params.yaw_step_deg)
    yaws = _grid(0.0, np.radians(params.yaw_range_deg), yaw_step)
    xs = _grid(0.0, params.xy_range, params.xy_step)
    ys = _grid(0.0, params.xy_range, params.xy_step)
    costs = hole_cost_grid(target_xy, holes, r, yaws, xs, ys)
    yaw, x, y, cost = _pick(costs, yaws, xs, ys)
    res = AlignResult(yaw, x, y, cost, [cost], [(yaws, xs, ys, costs)])

    xy_step = params.xy_step
    for _ in range(params.refine_levels):
        yaws = _grid(yaw, 2 * yaw_step, yaw_step / 2)
        xs = _grid(x, 2 * xy_step, xy_step / 2)
        ys = _grid(y, 2 * xy_step, xy_step / 2)
        yaw_step, xy_step = yaw_step / 2, xy_step / 2
        costs = hole_cost_grid(target_xy, holes, r, yaws, xs, ys)
        yaw, x, y, cost = _pick(costs, yaws, xs, ys)
        res.level_costs.append(cost)
        res.evaluated.append((yaws, xs, ys, costs))
    res.yaw, res.x, res.y, res.cost = yaw, x, y, cost
    return res


def extract_circle_centers(alignment, spec, frame):
    """Hole centers in the LiDAR frame plus the board pose, from an alignment."""
    R2 = _rot2(alignment.yaw)
    t = np.array([alignment.x, alignment.y])
    holes = np.asarray(spec.hole_centers, dtype=float)
    centers = frame.lift((holes + t) @ R2.T)
    c, s = np.cos(alignment.yaw), np.sin(alignment.yaw)
    xb = c * frame.u + s * frame.v
    yb = -s * frame.u + c * frame.v
    origin = frame.lift(R2 @ t)
    pose = Pose.from_matrix(np.column_stack([xb, yb, frame.n]), origin)
    return centers, pose


def board_rng(seed, board_id):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(board_id),)))


def detect_board(points, spec, params, board_id=0, mask_pitch=0.02):
    roi = roi_filter(points, params)
    n, d, inl = ransac_plane(roi, params, board_rng(params.seed, board_id))
    target = roi[inl]
    frame = plane_frame(n, d, target, params.up)
    mask = make_mask(spec, min(mask_pitch, spec.hole_radius / 2))
    align = grid_search_align(frame.to_plane(target), mask, params)
    centers, pose = extract_circle_centers(align, spec, frame)
    return BoardDetection(board_id, n, d, pose, centers, align.cost, int(inl.sum()), align)


def _boxes_overlap(a, b):
    return bool(np.all(np.asarray(a.roi_min) < np.asarray(b.roi_max)) and np.all(np.asarray(b.roi_min) < np.asarray(a.roi_max)))


def detect_boards(points, boards):
    """Run the detector for ``boards = [(board_id, BoardSpec, DetectionParams), ...]``.

    Returns ``(detections, failures)``; a failing board is reported and the
    rest carry on. Output order follows board id.
    """
    for i in range(len(boards)):
        for j in range(i + 1, len(boards)):
            if _boxes_overlap(boards[i][2], boards[j][2]):
                raise DetectionError(f"ROI boxes of boards {boards[i][0]} and {boards[j][0]} overlap")
    detections, failures = [], []
    for board_id, spec, params in sorted(boards, key=lambda b: b[0]):
        try:
            detections.append(detect_board(points, spec, params, board_id))
        except CalibrationError as e:
            failures.append({"board_id": board_id, "stage": "detect", "error": type(e).__name__, "message": str(e)})
    return detections, failures


def params_for_boards(priors, base=None):
    """Per-board DetectionParams from a priors dict ``{"up": ..., "boards": [...]}``."""
    base = base or DetectionParams()
    out = []
    for b in priors.get("boards", []):
        kw = {k: tuple(v) for k, v in b.items() if k in ("roi_min", "roi_max", "expected_normal")}
        if "up" in priors:
            kw["up"] = tuple(priors["up"])
        out.append(replace(base, **kw))
    return out
