"""Joint refinement of intrinsics, distortion, board poses and the LiDAR extrinsic.

Three residual groups, all in pixels and stacked in this order:

* ``lidar``  - LiDAR hole centers projected through ``T_lidar_camera`` minus
  the frozen hole-center anchors;
* ``corner`` - projected checkerboard corners minus detections;
* ``anchor`` - hole centers projected through each board pose minus the same
  frozen anchors.

Each group is scaled by the square root of its weight. Focal lengths are
optimized as logarithms so they stay positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .board import circle_centers
from .errors import DimensionMismatch
from .geometry import _SMALL_ANGLE, CameraModel, Pose, distort_normalized, project, rotation_from_angle_axis
from .lm import levenberg_marquardt, numeric_jacobian

N_CAMERA = 8  # log fx, log fy, cx, cy, k1, k2, p1, p2
GROUPS = ("lidar", "corner", "anchor")


@dataclass
class BoardPairs:
    """Observations of one board: four hole-center pairs plus its corners."""

    circle_lidar: np.ndarray  # (4, 3) hole centers in the LiDAR frame
    circle_board: np.ndarray  # (4, 3) the same holes in the board frame
    anchors: np.ndarray  # (4, 2) hole-center pixels from the initialization
    corner_board: np.ndarray  # (C, 3)
    corner_pixels: np.ndarray  # (C, 2)
    board_id: int = 0

    def __post_init__(self):
        self.circle_lidar = np.asarray(self.circle_lidar, dtype=float).reshape(-1, 3)
        self.circle_board = np.asarray(self.circle_board, dtype=float).reshape(-1, 3)
        self.anchors = np.asarray(self.anchors, dtype=float).reshape(-1, 2)
        self.corner_board = np.asarray(self.corner_board, dtype=float).reshape(-1, 3)
        self.corner_pixels = np.asarray(self.corner_pixels, dtype=float).reshape(-1, 2)
        if not (len(self.circle_lidar) == len(self.circle_board) == len(self.anchors) == 4):
            raise DimensionMismatch(f"board {self.board_id}: need exactly 4 hole-center pairs")
        if len(self.corner_board) != len(self.corner_pixels):
            raise DimensionMismatch(f"board {self.board_id}: corner count mismatch")
        if len(self.corner_board) < 4:
            raise DimensionMismatch(f"board {self.board_id}: need at least 4 corners")


@dataclass
class PointPairSet:
    boards: list

    def to_dict(self):
        return {
            "boards": [
                {
                    "board_id": b.board_id,
                    "circle_pairs": [
                        {"p3d": p3.tolist(), "board": pb.tolist(), "p2d": p2.tolist()}
                        for p3, pb, p2 in zip(b.circle_lidar, b.circle_board, b.anchors)
                    ],
                    "corners": [
                        {"board": pb.tolist(), "pixel": px.tolist()}
                        for pb, px in zip(b.corner_board, b.corner_pixels)
                    ],
                }
                for b in self.boards
            ]
        }

    @classmethod
    def from_dict(cls, d, image_size=None):
        boards = []
        for b in d["boards"]:
            cp = b["circle_pairs"]
            bp = BoardPairs(
                circle_lidar=[c["p3d"] for c in cp],
                circle_board=[c["board"] for c in cp],
                anchors=[c["p2d"] for c in cp],
                corner_board=[c["board"] for c in b["corners"]],
                corner_pixels=[c["pixel"] for c in b["corners"]],
                board_id=b.get("board_id", len(boards)),
            )
            if image_size is not None:
                w, h = image_size
                for px in (bp.anchors, bp.corner_pixels):
                    if np.any((px < 0) | (px > [w, h])):
                        raise DimensionMismatch(f"board {bp.board_id}: pixel outside the image")
            boards.append(bp)
        return cls(boards)

    def n_residuals(self):
        nb = len(self.boards)
        return 2 * (4 * nb + sum(len(b.corner_board) for b in self.boards) + 4 * nb)


@dataclass
class ParameterBlock:
    camera: CameraModel
    T_lidar_camera: Pose
    board_poses: list  # board -> camera, one per board

    def pack(self):
        c = self.camera
        head = [np.log(c.fx), np.log(c.fy), c.cx, c.cy, *c.dist]
        parts = [np.array(head), self.T_lidar_camera.as_vector()]
        parts += [p.as_vector() for p in self.board_poses]
        return np.concatenate(parts)

    def unpack(self, x):
        x = np.asarray(x, dtype=float)
        cam = replace(
            self.camera,
            fx=float(np.exp(x[0])),
            fy=float(np.exp(x[1])),
            cx=float(x[2]),
            cy=float(x[3]),
            dist=tuple(float(v) for v in x[4:8]),
        )
        T = Pose.from_vector(x[8:14])
        poses = [Pose.from_vector(x[14 + 6 * i : 20 + 6 * i]) for i in range(len(self.board_poses))]
        return ParameterBlock(cam, T, poses)

    def to_dict(self):
        return {
            "camera": self.camera.to_dict(),
            "T_lidar_camera": self.T_lidar_camera.to_dict(),
            "board_poses": [p.to_dict() for p in self.board_poses],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            CameraModel.from_dict(d["camera"]),
            Pose.from_dict(d["T_lidar_camera"]),
            [Pose.from_dict(p) for p in d["board_poses"]],
        )


@dataclass
class OptimizeOptions:
    w_lidar: float = 1.0
    w_corner: float = 1.0
    w_anchor: float = 1.0
    max_iters: int = 100
    lambda_init: float = 1e-3
    gtol: float = 1e-10
    ftol: float = 1e-14
    xtol: float = 1e-12
    n_dist: int = 4  # how many of (k1, k2, p1, p2) are free

    def __post_init__(self):
        for k in ("w_lidar", "w_corner", "w_anchor", "lambda_init", "gtol", "ftol", "xtol"):
            setattr(self, k, float(getattr(self, k)))
        for k in ("max_iters", "n_dist"):
            v = getattr(self, k)
            if isinstance(v, bool) or int(v) != v:
                raise ValueError(f"{k} must be an integer")
            setattr(self, k, int(v))
        if min(self.w_lidar, self.w_corner, self.w_anchor) <= 0:
            raise ValueError("weights must be positive")
        if self.max_iters < 1 or self.lambda_init <= 0:
            raise ValueError("max_iters and lambda_init must be positive")
        if not 0 <= self.n_dist <= 4:
            raise ValueError("n_dist must lie in 0..4")

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class OptimizeReport:
    params: ParameterBlock
    rms: dict  # per residual group, pixels, unweighted
    trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    reason: str = ""
    final_cost: float = 0.0

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "rms_px": dict(self.rms),
            "trace": list(self.trace),
            "iterations": self.iterations,
            "converged": self.converged,
            "reason": self.reason,
            "final_cost": self.final_cost,
        }


def _rotations(V):
    """Rodrigues formula for a stack of angle-axis vectors (B, 3) -> (B, 3, 3)."""
    th2 = np.sum(V * V, axis=1)
    small = th2 < _SMALL_ANGLE**2
    th = np.sqrt(np.where(small, 1.0, th2))
    a = np.where(small, 1.0 - th2 / 6.0, np.sin(th) / th)
    b = np.where(small, 0.5 - th2 / 24.0, (1.0 - np.cos(th)) / np.where(small, 1.0, th2))
    K = np.zeros((len(V), 3, 3))
    K[:, 0, 1], K[:, 0, 2] = -V[:, 2], V[:, 1]
    K[:, 1, 0], K[:, 1, 2] = V[:, 2], -V[:, 0]
    K[:, 2, 0], K[:, 2, 1] = -V[:, 1], V[:, 0]
    return np.eye(3) + a[:, None, None] * K + b[:, None, None] * (K @ K)


def _project_fast(x_cam, R, t, P):
    """Projection with camera block ``x_cam``; NaN for points behind the camera.

    ``R`` and ``t`` are either one pose or per-point stacks (N, 3, 3), (N, 3).
    """
    fx, fy = np.exp(x_cam[0]), np.exp(x_cam[1])
    if R.ndim == 3:
        pc = np.einsum("nij,nj->ni", R, P) + t
    else:
        pc = P @ R.T + t
    z = pc[:, 2:3]
    z = np.where(z > 1e-6, z, np.nan)
    nd = distort_normalized(x_cam[4:8], pc[:, :2] / z)
    return np.column_stack([fx * nd[:, 0] + x_cam[2], fy * nd[:, 1] + x_cam[3]])


class _Problem:
    """Residual bookkeeping for one PointPairSet."""

    def __init__(self, pairs, opts, skew=0.0):
        if skew != 0.0:
            raise DimensionMismatch("skew is fixed to zero in the joint optimization")
        self.pairs = pairs
        self.opts = opts
        nb = len(pairs.boards)
        self.nb = nb
        self.n_params = N_CAMERA + 6 + 6 * nb
        # row ranges per group and board
        ncorner = [len(b.corner_board) for b in pairs.boards]
        self.slices = {}
        row = 0
        for g in GROUPS:
            for i in range(nb):
                n = 4 if g != "corner" else ncorner[i]
                self.slices[g, i] = slice(row, row + 2 * n)
                row += 2 * n
        self.n_rows = row
        self.sw = {g: np.sqrt(getattr(opts, "w_" + g)) for g in GROUPS}
        # every board's points stacked once, with the owning board per point
        B = pairs.boards
        self._lidar = np.vstack([b.circle_lidar for b in B])
        self._anchors = np.vstack([b.anchors for b in B])
        self._corner = np.vstack([b.corner_board for b in B])
        self._pixels = np.vstack([b.corner_pixels for b in B])
        self._circle = np.vstack([b.circle_board for b in B])
        self._corner_idx = np.repeat(np.arange(nb), ncorner)
        self._circle_idx = np.repeat(np.arange(nb), 4)

    def residuals(self, x, groups=GROUPS):
        xc = x[:N_CAMERA]
        out = []
        if "lidar" in groups:
            R = rotation_from_angle_axis(x[8:11])
            t = x[11:14]
            out.append(self.sw["lidar"] * (_project_fast(xc, R, t, self._lidar) - self._anchors).ravel())
        if "corner" in groups or "anchor" in groups:
            v = x[14 : 14 + 6 * self.nb].reshape(self.nb, 6)
            Rs, ts = _rotations(v[:, :3]), v[:, 3:]
        if "corner" in groups:
            i = self._corner_idx
            out.append(self.sw["corner"] * (_project_fast(xc, Rs[i], ts[i], self._corner) - self._pixels).ravel())
        if "anchor" in groups:
            i = self._circle_idx
            out.append(self.sw["anchor"] * (_project_fast(xc, Rs[i], ts[i], self._circle) - self._anchors).ravel())
        return np.concatenate(out) if out else np.zeros(0)

    def sparsity(self, groups=GROUPS):
        rows = {}
        start = 0
        for g in GROUPS:
            if g not in groups:
                continue
            for i in range(self.nb):
                n = self.slices[g, i].stop - self.slices[g, i].start
                rows[g, i] = slice(start, start + n)
                start += n
        S = np.zeros((start, self.n_params), dtype=bool)
        S[:, :N_CAMERA] = True
        for (g, i), sl in rows.items():
            if g == "lidar":
                S[sl, 8:14] = True
            else:
                S[sl, 14 + 6 * i : 20 + 6 * i] = True
        return S

    def group_rms(self, x):
        r = self.residuals(x)
        out = {}
        for g in GROUPS:
            parts = [r[self.slices[g, i]] for i in range(self.nb)]
            e = np.concatenate(parts).reshape(-1, 2) / self.sw[g]
            out[g] = float(np.sqrt(np.mean(np.sum(e**2, axis=1)))) if len(e) else 0.0
        return out


def _colors(free, sparsity):
    """Greedy grouping of free columns whose row sets are disjoint."""
    groups, used = [], []
    for k, j in enumerate(free):
        rows = sparsity[:, j]
        for g, u in zip(groups, used):
            if not np.any(u & rows):
                g.append(k)
                u |= rows
                break
        else:
            groups.append([k])
            used.append(rows.copy())
    return groups


def _check_dims(params, pairs):
    if len(params.board_poses) != len(pairs.boards):
        raise DimensionMismatch(
            f"{len(params.board_poses)} board poses for {len(pairs.boards)} boards"
        )


def build_residuals(params, pairs, opts=None):
    """Stacked weighted residual vector (lidar, corner, anchor groups)."""
    opts = opts or OptimizeOptions()
    _check_dims(params, pairs)
    prob = _Problem(pairs, opts, params.camera.skew)
    return prob.residuals(params.pack())


def compute_circle_centers_2d(camera, board_pose, spec):
    """Hole-center pixels for a board seen at ``board_pose`` (board -> camera)."""
    return project(camera, board_pose, circle_centers(spec))


def free_mask(nb, n_dist=4, camera=True, extrinsic=True, boards=True):
    m = np.zeros(N_CAMERA + 6 + 6 * nb, dtype=bool)
    if camera:
        m[: 4 + n_dist] = True
    if extrinsic:
        m[8:14] = True
    if boards:
        m[14:] = True
    return m


def _run(prob, x0, mask, groups, opts, colored=True):
    free = np.flatnonzero(mask)
    S = prob.sparsity(groups)

    def expand(z):
        x = x0.copy()
        x[free] = z
        return x

    def fun(z):
        return prob.residuals(expand(z), groups)

    colors = _colors(free, S) if colored else None
    Sfree = S[:, free]

    def jac(z):
        return numeric_jacobian(fun, z, sparsity=Sfree, colors=colors)

    lm = levenberg_marquardt(
        fun,
        x0[free],
        jac,
        max_iters=opts.max_iters,
        lambda_init=opts.lambda_init,
        gtol=opts.gtol,
        ftol=opts.ftol,
        xtol=opts.xtol,
    )
    return expand(lm.x), lm


def _report(prob, template, x, lm):
    return OptimizeReport(
        params=template.unpack(x),
        rms=prob.group_rms(x),
        trace=[float(c) for c in lm.trace],
        iterations=lm.iterations,
        converged=lm.converged,
        reason=lm.reason,
        final_cost=float(lm.cost),
    )


def solve(initial, pairs, opts=None):
    """One-stage joint calibration over every parameter."""
    opts = opts or OptimizeOptions()
    _check_dims(initial, pairs)
    prob = _Problem(pairs, opts, initial.camera.skew)
    x0 = initial.pack()
    mask = free_mask(prob.nb, opts.n_dist)
    x, lm = _run(prob, x0, mask, GROUPS, opts)
    return _report(prob, initial, x, lm)


def solve_two_stage(initial, pairs, opts=None):
    """Intrinsics-first baseline.

    The camera and board poses of ``initial`` are taken as the result of a
    separate intrinsic calibration and frozen; only ``T_lidar_camera`` is then
    fit to the LiDAR group.
    """
    opts = opts or OptimizeOptions()
    _check_dims(initial, pairs)
    prob = _Problem(pairs, opts, initial.camera.skew)
    x0 = initial.pack()
    mask = free_mask(prob.nb, opts.n_dist, camera=False, boards=False)
    x, lm = _run(prob, x0, mask, ("lidar",), opts)
    return _report(prob, initial, x, lm)


def refine_intrinsics(camera, board_poses, corner_views, opts=None, n_dist=None):
    """Corner-only refinement of intrinsics, distortion and board poses.

    ``corner_views`` is a list of ``(board_xyz, pixels)``. Returns
    ``(camera, poses, lm_result)``.
    """
    opts = opts or OptimizeOptions()
    n_dist = opts.n_dist if n_dist is None else n_dist
    dummy = np.zeros((4, 3))
    boards = [
        BoardPairs(dummy, dummy, np.zeros((4, 2)), obj, pix, board_id=i)
        for i, (obj, pix) in enumerate(corner_views)
    ]
    pairs = PointPairSet(boards)
    prob = _Problem(pairs, opts, camera.skew)
    block = ParameterBlock(camera, Pose.identity(), list(board_poses))
    x0 = block.pack()
    mask = free_mask(prob.nb, n_dist, extrinsic=False)
    x, lm = _run(prob, x0, mask, ("corner",), opts)
    out = block.unpack(x)
    return out.camera, out.board_poses, lm
