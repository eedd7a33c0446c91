"""Lane geometry: polylines on a fixed vertical sample grid, stripe rasters, stripe IoU.

A lane is stored as N horizontal coordinates sampled at N fixed image rows
(uniformly spaced between ``y_top`` and ``y_bottom``), plus a per-point
validity mask.  Everything downstream (eigenlanes, NMS masks, evaluation)
is built on this representation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidLane, ShapeError

# Loose sanity bound for annotated x coordinates, in units of frame width:
# lanes may extrapolate slightly off-frame but not arbitrarily.
X_BOUND_LO = -1.0
X_BOUND_HI = 2.0


@dataclass(frozen=True)
class SampleGrid:
    """Vertical sampling layout shared by all lanes of a dataset.

    n: number of sample rows; y_top/y_bottom: image rows of the first and
    last samples; h/w: frame dimensions in pixels.
    """

    n: int
    y_top: float
    y_bottom: float
    h: int
    w: int

    def __post_init__(self):
        if self.n < 2:
            raise InvalidLane(f"grid needs at least 2 sample rows, got {self.n}")
        if not (0 <= self.y_top < self.y_bottom <= self.h - 1):
            raise InvalidLane(
                f"require 0 <= y_top < y_bottom <= h-1, got "
                f"y_top={self.y_top}, y_bottom={self.y_bottom}, h={self.h}"
            )

    def rows(self) -> np.ndarray:
        """The n sample rows, exact at both endpoints."""
        return np.linspace(self.y_top, self.y_bottom, self.n)


@dataclass
class LanePolyline:
    """A lane as x coordinates at the grid's sample rows, with a validity mask."""

    xs: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.xs.shape != self.valid.shape or self.xs.ndim != 1:
            raise InvalidLane("xs and valid must be 1-D arrays of equal length")

    @classmethod
    def full(cls, xs) -> "LanePolyline":
        xs = np.asarray(xs, dtype=np.float64)
        return cls(xs, np.ones(xs.shape, dtype=bool))

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def copy(self) -> "LanePolyline":
        return LanePolyline(self.xs.copy(), self.valid.copy())


def check_lane_bounds(lane: LanePolyline, grid: SampleGrid) -> None:
    """Enforce the loose x-range invariant on annotated lanes."""
    xs = lane.xs[lane.valid]
    if xs.size and (xs.min() < X_BOUND_LO * grid.w or xs.max() > X_BOUND_HI * grid.w):
        raise InvalidLane(
            f"valid x coordinates outside [{X_BOUND_LO * grid.w}, {X_BOUND_HI * grid.w}]"
        )


def resample_lane(points, grid: SampleGrid) -> LanePolyline:
    """Resample an ordered (x, y) point list at the grid rows.

    Linear interpolation inside the point list's y-span; rows outside the
    span are marked invalid (no extrapolation).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise InvalidLane("need at least 2 (x, y) points")
    px, py = pts[:, 0], pts[:, 1]
    if np.any(np.diff(py) <= 0):
        raise InvalidLane("point y coordinates must be strictly increasing")
    rows = grid.rows()
    xs = np.interp(rows, py, px)
    valid = (rows >= py[0] - 1e-9) & (rows <= py[-1] + 1e-9)
    lane = LanePolyline(xs, valid)
    check_lane_bounds(lane, grid)
    return lane


def lane_x_at(lane: LanePolyline, grid: SampleGrid, y) -> tuple[np.ndarray, np.ndarray]:
    """Interpolated lane x at arbitrary image rows.

    Returns (x values, in-span mask).  Interpolation runs over the valid
    samples only; queries outside the valid vertical extent are masked out.
    """
    if lane.n_valid < 2:
        raise InvalidLane("need at least 2 valid points to interpolate")
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    rows = grid.rows()
    vi = np.flatnonzero(lane.valid)
    ry, rx = rows[vi], lane.xs[vi]
    x = np.interp(y, ry, rx)
    ok = (y >= ry[0] - 1e-9) & (y <= ry[-1] + 1e-9)
    return x, ok


def rasterize_stripe(lane: LanePolyline, width: float, grid: SampleGrid) -> np.ndarray:
    """Rasterize a lane as a stripe of the given pixel width.

    For every integer image row inside the lane's valid vertical extent,
    pixels within width/2 horizontally of the row-interpolated lane center
    are set.  A pixel column c is covered when ``x - width/2 <= c < x + width/2``,
    which puts exactly ``width`` pixels on each interior row for integer widths.
    """
    if width < 1:
        raise InvalidLane(f"stripe width must be >= 1, got {width}")
    if lane.n_valid < 2:
        raise InvalidLane("need at least 2 valid points to rasterize")
    mask = np.zeros((grid.h, grid.w), dtype=bool)
    rows = grid.rows()
    vi = np.flatnonzero(lane.valid)
    y0 = max(int(np.ceil(rows[vi[0]] - 1e-9)), 0)
    y1 = min(int(np.floor(rows[vi[-1]] + 1e-9)), grid.h - 1)
    if y0 > y1:
        return mask
    ys = np.arange(y0, y1 + 1)
    x, _ = lane_x_at(lane, grid, ys)
    lo = np.ceil(x - width / 2.0 - 1e-9).astype(int)
    hi = np.ceil(x + width / 2.0 - 1e-9).astype(int) - 1
    lo = np.clip(lo, 0, grid.w)  # lo == w leaves the row empty
    hi = np.clip(hi, -1, grid.w - 1)
    cols = np.arange(grid.w)
    mask[ys] = (cols >= lo[:, None]) & (cols <= hi[:, None])
    return mask


def stripe_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection-over-union of two binary stripe masks; 0 when both empty."""
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    inter = np.logical_and(a, b).sum()
    return float(inter) / float(union)
