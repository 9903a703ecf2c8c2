"""File formats: ASCII PLY clouds, JSON documents and binary PPM images."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import CalibrationError


class FormatError(CalibrationError):
    stage = "io"


def write_ply(path, points, intensity=None):
    """ASCII PLY 1.0 with float x, y, z, intensity."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if intensity is None:
        intensity = np.zeros(len(points))
    data = np.column_stack([points, np.asarray(intensity, dtype=float).reshape(-1)])
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(data)}",
        "property float x",
        "property float y",
        "property float z",
        "property float intensity",
        "end_header",
    ]
    body = "\n".join(" ".join("%.9g" % v for v in row) for row in data)
    _atomic_write(path, ("\n".join(lines) + "\n" + body + ("\n" if len(data) else "")).encode())


def read_ply(path):
    """Return ``(points (N, 3), intensity (N,))``; intensity is zero when absent."""
    text = Path(path).read_text()
    head, sep, body = text.partition("end_header\n")
    if not sep or not head.startswith("ply"):
        raise FormatError(f"{path}: not an ASCII PLY file")
    n, props = None, []
    for line in head.splitlines():
        tok = line.split()
        if tok[:2] == ["format", "ascii"]:
            continue
        if tok[:1] == ["format"]:
            raise FormatError(f"{path}: only ASCII PLY is supported")
        if tok[:2] == ["element", "vertex"]:
            n = int(tok[2])
        elif tok[:1] == ["property"] and n is not None:
            props.append(tok[-1])
    if n is None or not {"x", "y", "z"} <= set(props):
        raise FormatError(f"{path}: missing vertex element or x/y/z")
    rows = body.split("\n")[:n]
    data = np.array([r.split() for r in rows], dtype=float).reshape(n, len(props)) if n else np.zeros((0, len(props)))
    pts = data[:, [props.index(k) for k in "xyz"]]
    inten = data[:, props.index("intensity")] if "intensity" in props else np.zeros(n)
    return pts, inten


def dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_json(path, obj):
    _atomic_write(path, dumps(obj).encode())


def read_json(path):
    with open(path) as f:
        return json.load(f)


def write_ppm(path, image):
    """Binary P6 from an (H, W, 3) uint8 array."""
    img = np.ascontiguousarray(image, dtype=np.uint8)
    h, w = img.shape[:2]
    _atomic_write(path, f"P6\n{w} {h}\n255\n".encode() + img.tobytes())


def read_ppm(path):
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        fields.append(raw[pos:end].decode())
        pos = end
    pos += 1  # single whitespace before the raster
    if fields[0] != "P6" or fields[3] != "255":
        raise FormatError(f"{path}: expected an 8-bit P6 image")
    w, h = int(fields[1]), int(fields[2])
    data = raw[pos : pos + w * h * 3]
    if len(data) != w * h * 3:
        raise FormatError(f"{path}: truncated raster")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()


def _umask():
    mask = os.umask(0)
    os.umask(mask)
    return mask


def _atomic_write(path, data):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
