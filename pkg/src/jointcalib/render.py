"""Raster overlay of a LiDAR cloud projected into the image."""

from __future__ import annotations

import numpy as np
from matplotlib import colormaps

from .geometry import DEFAULT_VALIDITY_RADIUS, DEFAULT_Z_MIN, distort_normalized


def _disc_offsets(radius):
    r = int(np.ceil(radius))
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    keep = dx * dx + dy * dy <= radius * radius
    return dx[keep], dy[keep]


def project_cloud(points, camera, T):
    """Pixels and depths for every point; invalid points get NaN pixels.

    Points behind the camera or beyond the distortion validity radius are
    invalid, as in the full projection model.
    """
    pc = T.apply(points) if len(points) else np.zeros((0, 3))
    z = pc[:, 2]
    ok = z > DEFAULT_Z_MIN
    n = np.full((len(pc), 2), np.nan)
    n[ok] = pc[ok, :2] / z[ok, None]
    ok &= np.hypot(n[:, 0], n[:, 1]) <= DEFAULT_VALIDITY_RADIUS
    n[~ok] = np.nan
    d = distort_normalized(camera.dist, n)
    uv = np.column_stack([camera.fx * d[:, 0] + camera.skew * d[:, 1] + camera.cx, camera.fy * d[:, 1] + camera.cy])
    return uv, z


def _ring(img, center, radius, color):
    h, w = img.shape[:2]
    t = np.linspace(0.0, 2 * np.pi, max(16, int(8 * radius)), endpoint=False)
    for rr in (radius - 0.5, radius, radius + 0.5):
        u = np.rint(center[0] + rr * np.cos(t)).astype(int)
        v = np.rint(center[1] + rr * np.sin(t)).astype(int)
        ok = (u >= 0) & (u < w) & (v >= 0) & (v < h)
        img[v[ok], u[ok]] = color


def _cross(img, center, size, color):
    h, w = img.shape[:2]
    u0, v0 = (int(np.rint(c)) for c in center)
    s = np.arange(-size, size + 1)
    for u, v in ((u0 + s, np.full_like(s, v0)), (np.full_like(s, u0), v0 + s)):
        ok = (u >= 0) & (u < w) & (v >= 0) & (v < h)
        img[v[ok], u[ok]] = color


def render_overlay(
    points,
    intensity,
    camera,
    T_lidar_camera,
    image_size=None,
    background=None,
    point_radius=2.0,
    cmap="viridis",
    pairs=(),
    marker_size=8,
    ring_color=None,
    cross_color=(255, 255, 255),
):
    """Draw the cloud as intensity-colored discs, nearest point on top.

    ``pairs`` holds ``(lidar_xyz, anchor_uv)`` hole-center pairs: the LiDAR
    center is projected and drawn as a ring, the image-side anchor as a cross.
    Returns ``(image (H, W, 3) uint8, skipped)`` where ``skipped`` counts cloud
    points that did not land inside the image.
    """
    size = image_size or camera.image_size
    w, h = int(size[0]), int(size[1])
    if background is None:
        img = np.zeros((h, w, 3), dtype=np.uint8)
    else:
        img = np.array(background, dtype=np.uint8, copy=True)
        if img.shape != (h, w, 3):
            raise ValueError(f"background is {img.shape[1::-1]}, image size is {(w, h)}")
    # a black ring disappears on the blank canvas, so fall back to red there
    if ring_color is None:
        ring_color = (0, 0, 0) if background is not None else (255, 0, 0)

    points = np.asarray(points, dtype=float).reshape(-1, 3)
    inten = np.asarray(intensity, dtype=float).reshape(-1) if intensity is not None else np.zeros(len(points))
    uv, z = project_cloud(points, camera, T_lidar_camera)
    inside = np.isfinite(uv).all(axis=1)
    inside[inside] = (uv[inside, 0] >= 0) & (uv[inside, 0] < w) & (uv[inside, 1] >= 0) & (uv[inside, 1] < h)
    skipped = int(len(points) - inside.sum())

    if inside.any():
        lo, hi = inten.min(), inten.max()
        scaled = (inten[inside] - lo) / (hi - lo) if hi > lo else np.zeros(inside.sum())
        colors = (np.asarray(colormaps[cmap](scaled))[:, :3] * 255).round().astype(np.uint8)
        dx, dy = _disc_offsets(point_radius)
        pu = np.rint(uv[inside, 0]).astype(int)[:, None] + dx
        pv = np.rint(uv[inside, 1]).astype(int)[:, None] + dy
        depth = np.broadcast_to(z[inside][:, None], pu.shape)
        owner = np.broadcast_to(np.arange(inside.sum())[:, None], pu.shape)
        ok = (pu >= 0) & (pu < w) & (pv >= 0) & (pv < h)
        pix = pv[ok] * w + pu[ok]
        # z-buffer: per pixel keep the nearest point, ties to the lower index
        order = np.lexsort((owner[ok], depth[ok], pix))
        first = np.unique(pix[order], return_index=True)[1]
        win = order[first]
        img.reshape(-1, 3)[pix[win]] = colors[owner[ok][win]]

    for lidar_xyz, anchor in pairs:
        p, _ = project_cloud(np.asarray(lidar_xyz, dtype=float).reshape(1, 3), camera, T_lidar_camera)
        if np.isfinite(p).all():
            _ring(img, p[0], marker_size, ring_color)
        _cross(img, np.asarray(anchor, dtype=float), marker_size, cross_color)
    return img, skipped
