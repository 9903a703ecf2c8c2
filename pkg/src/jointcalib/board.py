"""The calibration target: a centered checkerboard surrounded by four holes.

Board frame: origin at the board center, x right, y up, z = 0 on the board
face (z points out of the printed side, toward the sensors).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidBoardSpec, InvalidPitch

HOLE_ORDER = ("top-left", "top-right", "bottom-left", "bottom-right")


def _canonical_hole_order(centers):
    """Sort four (x, y) points into TL, TR, BL, BR."""
    pts = [tuple(map(float, c[:2])) for c in centers]
    by_y = sorted(pts, key=lambda p: -p[1])
    top = sorted(by_y[:2], key=lambda p: p[0])
    bottom = sorted(by_y[2:], key=lambda p: p[0])
    return tuple(top + bottom)


@dataclass(frozen=True)
class BoardSpec:
    checker_rows: int = 8  # interior corners along y
    checker_cols: int = 6  # interior corners along x
    square_size: float = 0.08
    hole_centers: tuple = ((-0.42, 0.28), (0.42, 0.28), (-0.42, -0.28), (0.42, -0.28))
    hole_radius: float = 0.11
    board_width: float = 1.2
    board_height: float = 0.9

    def __post_init__(self):
        if self.checker_rows < 2 or self.checker_cols < 2:
            raise InvalidBoardSpec("need at least 2x2 interior corners")
        if self.square_size <= 0 or self.hole_radius <= 0:
            raise InvalidBoardSpec("square size and hole radius must be positive")
        if len(self.hole_centers) not in (0, 4):
            raise InvalidBoardSpec("the target carries exactly four holes")
        holes = _canonical_hole_order(self.hole_centers) if self.hole_centers else ()
        object.__setattr__(self, "hole_centers", holes)

        hw, hh = self.board_width / 2, self.board_height / 2
        cw, ch = self.checker_extent
        if cw > hw or ch > hh:
            raise InvalidBoardSpec("checkerboard larger than the board")
        r = self.hole_radius
        for x, y in holes:
            if abs(x) + r > hw or abs(y) + r > hh:
                raise InvalidBoardSpec(f"hole at ({x}, {y}) crosses the board outline")
            # distance from the hole center to the checkerboard rectangle
            dx = max(abs(x) - cw, 0.0)
            dy = max(abs(y) - ch, 0.0)
            if math.hypot(dx, dy) < r:
                raise InvalidBoardSpec(f"hole at ({x}, {y}) overlaps the checkerboard")
        for i in range(len(holes)):
            for j in range(i + 1, len(holes)):
                if math.dist(holes[i], holes[j]) < 2 * r:
                    raise InvalidBoardSpec("holes overlap each other")

    @property
    def checker_extent(self):
        """Half width and half height of the printed squares."""
        return (
            (self.checker_cols + 1) * self.square_size / 2,
            (self.checker_rows + 1) * self.square_size / 2,
        )

    def to_dict(self):
        return {
            "checker_rows": self.checker_rows,
            "checker_cols": self.checker_cols,
            "square_size_m": self.square_size,
            "hole_centers_m": [list(c) for c in self.hole_centers],
            "hole_radius_m": self.hole_radius,
            "board_width_m": self.board_width,
            "board_height_m": self.board_height,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                checker_rows=int(d["checker_rows"]),
                checker_cols=int(d["checker_cols"]),
                square_size=float(d["square_size_m"]),
                hole_centers=tuple(tuple(float(v) for v in c[:2]) for c in d["hole_centers_m"]),
                hole_radius=float(d["hole_radius_m"]),
                board_width=float(d["board_width_m"]),
                board_height=float(d["board_height_m"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidBoardSpec(f"bad board spec: {e}") from e

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def corner_points(spec):
    """Interior corners, row-major from the bottom-left, z = 0."""
    s = spec.square_size
    xs = (np.arange(spec.checker_cols) - (spec.checker_cols - 1) / 2) * s
    ys = (np.arange(spec.checker_rows) - (spec.checker_rows - 1) / 2) * s
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])


def circle_centers(spec):
    """Hole centers in canonical order (TL, TR, BL, BR), shape (4, 3)."""
    c = np.array(spec.hole_centers, dtype=float).reshape(-1, 2)
    return np.column_stack([c, np.zeros(len(c))])


def in_any_hole(spec, xy):
    """True where board-frame (x, y) lies strictly inside a hole."""
    xy = np.asarray(xy, dtype=float)
    inside = np.zeros(xy.shape[:-1], dtype=bool)
    for hx, hy in spec.hole_centers:
        inside |= np.hypot(xy[..., 0] - hx, xy[..., 1] - hy) < spec.hole_radius
    return inside


def on_board(spec, xy):
    xy = np.asarray(xy, dtype=float)
    return (np.abs(xy[..., 0]) <= spec.board_width / 2) & (np.abs(xy[..., 1]) <= spec.board_height / 2)


def square_color(spec, xy):
    """1 on white squares, 0 on black, -1 off the printed pattern."""
    xy = np.asarray(xy, dtype=float)
    cw, ch = spec.checker_extent
    s = spec.square_size
    i = np.floor((xy[..., 0] + cw) / s).astype(int)
    j = np.floor((xy[..., 1] + ch) / s).astype(int)
    inside = (np.abs(xy[..., 0]) < cw) & (np.abs(xy[..., 1]) < ch)
    return np.where(inside, (i + j) % 2, -1)


@dataclass(frozen=True, eq=False)
class MaskCloud:
    points: np.ndarray  # (N, 3), board frame, z = 0
    sample_pitch: float
    hole_centers: np.ndarray  # (4, 2)
    hole_radius: float


def make_mask(spec, sample_pitch):
    """Regular grid over the board outline with hole interiors removed."""
    if not (0 < sample_pitch < spec.hole_radius):
        raise InvalidPitch("sample pitch must lie in (0, hole_radius)")
    nx = math.ceil(spec.board_width / sample_pitch)
    ny = math.ceil(spec.board_height / sample_pitch)
    # cell-centered samples keep the grid symmetric and inside the outline
    xs = (np.arange(nx) + 0.5) * (spec.board_width / nx) - spec.board_width / 2
    ys = (np.arange(ny) + 0.5) * (spec.board_height / ny) - spec.board_height / 2
    X, Y = np.meshgrid(xs, ys)
    xy = np.column_stack([X.ravel(), Y.ravel()])
    keep = np.ones(len(xy), dtype=bool)
    for hx, hy in spec.hole_centers:
        keep &= np.hypot(xy[:, 0] - hx, xy[:, 1] - hy) > spec.hole_radius
    xy = xy[keep]
    return MaskCloud(
        np.column_stack([xy, np.zeros(len(xy))]),
        float(sample_pitch),
        np.array(spec.hole_centers, dtype=float).reshape(-1, 2),
        float(spec.hole_radius),
    )
