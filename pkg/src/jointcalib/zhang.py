"""Closed-form intrinsics and board poses from planar corner views.

Homographies come from a Hartley-normalized DLT; the intrinsics from the two
absolute-conic constraints each view puts on ``B = K^-T K^-1``, with zero
skew enforced by leaving B12 out of the unknowns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCamera,
    DegenerateConfiguration,
    DegenerateMotion,
    InitializationError,
    InsufficientViews,
    NotPositiveDefinite,
)
from .geometry import CameraModel, Pose, nearest_rotation, project


def _normalizer(pts):
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d < 1e-15:
        raise DegenerateConfiguration("all points coincide")
    s = np.sqrt(2.0) / d
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _homog(T, pts):
    ph = np.column_stack([pts, np.ones(len(pts))]) @ T.T
    return ph[:, :2] / ph[:, 2:3]


def estimate_homography(src, dst):
    """Homography ``H`` with ``dst ~ H @ [src, 1]``, normalized to ``h33 = 1``."""
    src = np.asarray(src, dtype=float)[:, :2]
    dst = np.asarray(dst, dtype=float)[:, :2]
    if len(src) != len(dst):
        raise DegenerateConfiguration("correspondence count mismatch")
    if len(src) < 4:
        raise DegenerateConfiguration(f"need at least 4 correspondences, got {len(src)}")

    Ts, Td = _normalizer(src), _normalizer(dst)
    a, b = _homog(Ts, src), _homog(Td, dst)
    for pts in (a, b):
        sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
        if sv[-1] < 1e-9 * sv[0]:
            raise DegenerateConfiguration("points are collinear")

    n = len(a)
    A = np.zeros((2 * n, 9))
    x, y = a[:, 0], a[:, 1]
    u, v = b[:, 0], b[:, 1]
    A[0::2, 0:3] = np.column_stack([x, y, np.ones(n)])
    A[0::2, 6:9] = -u[:, None] * np.column_stack([x, y, np.ones(n)])
    A[1::2, 3:6] = np.column_stack([x, y, np.ones(n)])
    A[1::2, 6:9] = -v[:, None] * np.column_stack([x, y, np.ones(n)])
    _, s, Vt = np.linalg.svd(A)
    if s[7] < 1e-10 * s[0]:
        raise DegenerateConfiguration("rank-deficient DLT system")
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.solve(Td, Hn @ Ts)
    if abs(H[2, 2]) < 1e-15:
        raise DegenerateConfiguration("homography with h33 = 0")
    H = H / H[2, 2]
    if abs(np.linalg.det(H)) < 1e-12:
        raise DegenerateConfiguration("singular homography")
    return H


def _conic_row(H, i, j):
    hi, hj = H[:, i], H[:, j]
    return np.array(
        [
            hi[0] * hj[0],
            hi[1] * hj[1],
            hi[0] * hj[2] + hi[2] * hj[0],
            hi[1] * hj[2] + hi[2] * hj[1],
            hi[2] * hj[2],
        ]
    )


def intrinsics_from_homographies(Hs, image_size=None):
    """Return ``(fx, fy, cx, cy)`` from three or more homographies."""
    if len(Hs) < 3:
        raise InsufficientViews(f"need at least 3 views, got {len(Hs)}")
    # condition the pixel side around a nominal center
    if image_size is not None:
        ox, oy = image_size[0] / 2, image_size[1] / 2
        scale = 2.0 / (image_size[0] + image_size[1])
    else:
        ox = oy = 0.0
        scale = 1.0 / np.mean([abs(H[0, 2]) + abs(H[1, 2]) + 1.0 for H in Hs])
    N = np.array([[scale, 0.0, -scale * ox], [0.0, scale, -scale * oy], [0.0, 0.0, 1.0]])

    rows = []
    for H in Hs:
        Hn = N @ H
        Hn = Hn / np.linalg.norm(Hn)
        rows.append(_conic_row(Hn, 0, 1))
        rows.append(_conic_row(Hn, 0, 0) - _conic_row(Hn, 1, 1))
    V = np.array(rows)
    _, s, Vt = np.linalg.svd(V)
    if s[3] < 1e-9 * s[0]:
        raise DegenerateMotion("board orientations do not constrain the intrinsics")
    B11, B22, B13, B23, B33 = Vt[-1]
    if B11 < 0:
        B11, B22, B13, B23, B33 = -B11, -B22, -B13, -B23, -B33
    if B11 <= 0 or B22 <= 0:
        raise NotPositiveDefinite("conic matrix is not positive definite")
    v0 = -B23 / B22
    lam = B33 - (B13**2 + v0 * (-B11 * B23)) / B11
    if lam / B11 <= 0 or lam / B22 <= 0:
        raise NotPositiveDefinite("conic matrix is not positive definite")
    alpha = np.sqrt(lam / B11)
    beta = np.sqrt(lam / B22)
    u0 = -B13 * alpha**2 / lam
    # undo the conditioning: K = N^-1 K'
    fx, fy = alpha / scale, beta / scale
    cx, cy = u0 / scale + ox, v0 / scale + oy
    return float(fx), float(fy), float(cx), float(cy)


def pose_from_homography(H, camera):
    """Board-to-camera pose from a homography and known intrinsics."""
    Kinv = np.linalg.inv(camera.K)
    a1, a2, a3 = (Kinv @ H[:, k] for k in range(3))
    lam = 2.0 / (np.linalg.norm(a1) + np.linalg.norm(a2))
    if a3[2] * lam < 0:
        lam = -lam
    r1, r2, t = lam * a1, lam * a2, lam * a3
    if t[2] <= 0:
        raise BehindCamera("board lies behind the camera")
    R = nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
    return Pose.from_matrix(R, t)


@dataclass
class InitResult:
    camera: CameraModel
    board_poses: list  # board -> camera
    view_rms: list = field(default_factory=list)  # pixels


def initialize(views, image_size=None):
    """Zhang initialization from ``views = [(board_xyz (N, 3), pixels (N, 2)), ...]``.

    Distortion is left at zero; it is estimated later by the corner refinement.
    """
    if len(views) < 3:
        raise InsufficientViews(f"need at least 3 usable views, got {len(views)}")
    Hs = []
    for i, (obj, pix) in enumerate(views):
        try:
            Hs.append(estimate_homography(obj, pix))
        except InitializationError as e:
            raise type(e)(str(e), view=i) from e
    fx, fy, cx, cy = intrinsics_from_homographies(Hs, image_size)
    if image_size is not None and not (0 <= cx <= image_size[0] and 0 <= cy <= image_size[1]):
        raise InitializationError("principal point estimate falls outside the image")
    camera = CameraModel(fx, fy, cx, cy, image_size=image_size)

    poses, rms = [], []
    for i, ((obj, pix), H) in enumerate(zip(views, Hs)):
        try:
            pose = pose_from_homography(H, camera)
        except BehindCamera as e:
            raise InitializationError(str(e), view=i) from e
        if np.any(pose.apply(obj)[:, 2] <= 0):
            raise InitializationError("board corners behind the camera", view=i)
        err = project(camera, pose, obj) - np.asarray(pix, dtype=float)
        poses.append(pose)
        rms.append(float(np.sqrt(np.mean(np.sum(err**2, axis=1)))))
    return InitResult(camera, poses, rms)
