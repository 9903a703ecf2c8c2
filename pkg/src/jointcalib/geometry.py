"""Rotations, rigid transforms, the pinhole camera and its lens distortion.

Conventions: a ``Pose`` maps points from a source frame into a target frame,
``p_target = R(r) @ p_source + t``, with ``r`` an angle-axis vector. Camera
frames are x right, y down, z forward. Distortion is the four-coefficient
Brown-Conrady model (k1, k2, p1, p2) applied to normalized coordinates before
the pixel mapping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, NoConvergence, NonRotationMatrix, OutsideValidityRadius

DEFAULT_VALIDITY_RADIUS = 1.5
DEFAULT_Z_MIN = 1e-6

# below this angle the Rodrigues coefficients switch to their Taylor series
_SMALL_ANGLE = 1e-4


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_from_angle_axis(r):
    """Rodrigues formula. Smooth through the zero rotation."""
    r = np.asarray(r, dtype=float)
    theta2 = float(r @ r)
    if theta2 < _SMALL_ANGLE**2:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        theta = np.sqrt(theta2)
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    K = skew(r)
    return np.eye(3) + a * K + b * (K @ K)


def angle_axis_from_rotation(R, tol=1e-6):
    """Inverse of :func:`rotation_from_angle_axis` with the angle in [0, pi].

    At exactly pi the axis sign is ambiguous; the branch with the first
    nonzero axis component positive is returned.
    """
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise NonRotationMatrix("expected a finite 3x3 matrix")
    if np.abs(R.T @ R - np.eye(3)).max() > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise NonRotationMatrix("matrix is not orthogonal with determinant 1")

    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = np.linalg.norm(w)  # sin(theta)
    c = 0.5 * (np.trace(R) - 1.0)  # cos(theta)
    theta = np.arctan2(s, c)

    if theta < _SMALL_ANGLE:
        return w * (1.0 + theta**2 / 6.0)
    if theta < np.pi - 1e-2:
        return w * (theta / s)

    # near pi: the symmetric part carries the axis, w only its sign
    S = 0.5 * (R + R.T) - c * np.eye(3)  # = (1 - cos) a a^T
    k = int(np.argmax(np.diag(S)))
    axis = S[:, k] / np.sqrt(S[k, k])
    axis /= np.linalg.norm(axis)
    if s > 1e-12:
        if axis @ w < 0:
            axis = -axis
    else:
        first = axis[np.flatnonzero(np.abs(axis) > 1e-12)[0]]
        if first < 0:
            axis = -axis
    return axis * theta


def nearest_rotation(M):
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rotation_from_rpy(roll, pitch, yaw, degrees=True):
    """Intrinsic x-y'-z'' Euler angles: ``R = Rx(roll) @ Ry(pitch) @ Rz(yaw)``."""
    if degrees:
        roll, pitch, yaw = np.radians([roll, pitch, yaw])
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return Rx @ Ry @ Rz


def rpy_from_rotation(R, degrees=True):
    R = np.asarray(R, dtype=float)
    pitch = np.arcsin(np.clip(R[0, 2], -1.0, 1.0))
    roll = np.arctan2(-R[1, 2], R[2, 2])
    yaw = np.arctan2(-R[0, 1], R[0, 0])
    out = np.array([roll, pitch, yaw])
    return np.degrees(out) if degrees else out


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform stored as angle-axis rotation ``r`` and translation ``t``."""

    r: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.r, dtype=float).reshape(3)
        t = np.array(self.t, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("pose components must be finite")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, R, t):
        return cls(angle_axis_from_rotation(R), t)

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(v[:3], v[3:6])

    @classmethod
    def from_rpy(cls, rpy_deg, t):
        return cls.from_matrix(rotation_from_rpy(*rpy_deg), t)

    @property
    def R(self):
        return rotation_from_angle_axis(self.r)

    def as_vector(self):
        return np.concatenate([self.r, self.t])

    def as_matrix4(self):
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def apply(self, p):
        return pose_apply(self, p)

    def compose(self, other):
        return pose_compose(self, other)

    def inverse(self):
        return pose_inverse(self)

    def to_dict(self):
        return {"r": self.r.tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["r"], d["t"])

    def __repr__(self):
        return f"Pose(r={np.round(self.r, 6).tolist()}, t={np.round(self.t, 6).tolist()})"


def pose_apply(T, p):
    """``R(r) p + t`` for a single point or an (N, 3) array."""
    p = np.asarray(p, dtype=float)
    return p @ T.R.T + T.t


def pose_compose(A, B):
    """Pose equivalent to applying ``B`` first, then ``A``."""
    RA = A.R
    return Pose.from_matrix(RA @ B.R, RA @ B.t + A.t)


def pose_inverse(T):
    R = T.R
    return Pose.from_matrix(R.T, -R.T @ T.t)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus Brown-Conrady distortion ``(k1, k2, p1, p2)``."""

    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0
    dist: tuple = (0.0, 0.0, 0.0, 0.0)
    image_size: tuple | None = None  # (width, height) in pixels

    def __post_init__(self):
        object.__setattr__(self, "dist", tuple(float(d) for d in self.dist))
        if len(self.dist) != 4:
            raise ValueError("dist must hold exactly (k1, k2, p1, p2)")
        vals = (self.fx, self.fy, self.cx, self.cy, self.skew) + self.dist
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("camera parameters must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.image_size is not None:
            w, h = self.image_size
            object.__setattr__(self, "image_size", (int(w), int(h)))
            if not (0 <= self.cx <= w and 0 <= self.cy <= h):
                raise ValueError("principal point outside the image")

    @property
    def K(self):
        return np.array([[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def with_params(self, **kw):
        d = self.to_dict()
        d.update(kw)
        return CameraModel.from_dict(d)

    def to_dict(self):
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "skew": self.skew,
            "dist": list(self.dist),
            "image_size": list(self.image_size) if self.image_size else None,
        }

    @classmethod
    def from_dict(cls, d):
        size = d.get("image_size")
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            skew=float(d.get("skew", 0.0)),
            dist=tuple(d.get("dist", (0.0, 0.0, 0.0, 0.0))),
            image_size=tuple(size) if size else None,
        )


def distort_normalized(dist, n):
    """Brown-Conrady on (..., 2) normalized coordinates, no range checks."""
    k1, k2, p1, p2 = dist
    x = n[..., 0]
    y = n[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + k1 * r2 + k2 * r2 * r2
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def _distortion_jacobian(dist, n):
    k1, k2, p1, p2 = dist
    x = n[..., 0]
    y = n[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + k1 * r2 + k2 * r2 * r2
    drad = 2.0 * k1 + 4.0 * k2 * r2  # d(radial)/d(r2) * 2
    J = np.empty(n.shape[:-1] + (2, 2))
    J[..., 0, 0] = radial + x * x * drad + 2.0 * p1 * y + 6.0 * p2 * x
    J[..., 0, 1] = x * y * drad + 2.0 * p1 * x + 2.0 * p2 * y
    J[..., 1, 0] = y * x * drad + 2.0 * p1 * x + 2.0 * p2 * y
    J[..., 1, 1] = radial + y * y * drad + 6.0 * p1 * y + 2.0 * p2 * x
    return J


def _check_radius(n, validity_radius):
    if np.any(np.hypot(n[..., 0], n[..., 1]) > validity_radius):
        raise OutsideValidityRadius(
            f"normalized point beyond the validity radius {validity_radius}"
        )


def distort(model, n, validity_radius=DEFAULT_VALIDITY_RADIUS):
    n = np.asarray(n, dtype=float)
    _check_radius(n, validity_radius)
    return distort_normalized(model.dist, n)


def undistort(model, d, validity_radius=DEFAULT_VALIDITY_RADIUS, tol=1e-10, max_iter=50):
    """Newton inversion of :func:`distort`, per point."""
    d = np.asarray(d, dtype=float)
    _check_radius(d, validity_radius)
    if not any(model.dist):
        return d.copy()
    n = d.copy()
    for _ in range(max_iter):
        err = distort_normalized(model.dist, n) - d
        if np.all(np.hypot(err[..., 0], err[..., 1]) < tol):
            return n
        J = _distortion_jacobian(model.dist, n)
        n = n - np.linalg.solve(J, err[..., None])[..., 0]
    err = distort_normalized(model.dist, n) - d
    if np.all(np.hypot(err[..., 0], err[..., 1]) < tol):
        return n
    raise NoConvergence(f"undistortion did not converge in {max_iter} iterations")


def project_camera_points(model, pc, z_min=DEFAULT_Z_MIN, validity_radius=DEFAULT_VALIDITY_RADIUS):
    """Project camera-frame points (..., 3) to pixels."""
    pc = np.asarray(pc, dtype=float)
    z = pc[..., 2]
    if np.any(z <= z_min):
        raise BehindCamera("point at or behind the camera plane")
    n = pc[..., :2] / z[..., None]
    nd = distort(model, n, validity_radius)
    u = model.fx * nd[..., 0] + model.skew * nd[..., 1] + model.cx
    v = model.fy * nd[..., 1] + model.cy
    return np.stack([u, v], axis=-1)


def project(model, T, p, z_min=DEFAULT_Z_MIN, validity_radius=DEFAULT_VALIDITY_RADIUS):
    """Full chain: pose, perspective divide, distortion, pixel mapping."""
    return project_camera_points(model, pose_apply(T, p), z_min, validity_radius)


def unproject(model, uv, validity_radius=DEFAULT_VALIDITY_RADIUS):
    """Pixels to undistorted normalized coordinates (rays with z = 1)."""
    uv = np.asarray(uv, dtype=float)
    yd = (uv[..., 1] - model.cy) / model.fy
    xd = (uv[..., 0] - model.cx - model.skew * yd) / model.fx
    return undistort(model, np.stack([xd, yd], axis=-1), validity_radius)
