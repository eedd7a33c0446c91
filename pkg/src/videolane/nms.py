"""Iterative peak selection over the probability map.

Repeatedly takes the highest-probability unsuppressed pixel, decodes the
coefficient map there into a lane curve, and suppresses everything within a
horizontal half-width of that curve.  Also renders the selected lanes back
into the binary working-grid mask that the predictive detector feeds on.

Grid bookkeeping: probability/coefficient maps live on the working grid
(input downsampled by WORKING_STRIDE); decoded lanes live in full-resolution
pixels on the basis grid.  Working pixel (i, j) has full-resolution center
(STRIDE*i + (STRIDE-1)/2, STRIDE*j + (STRIDE-1)/2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .eigenlane import EigenlaneBasis, decode
from .errors import ConfigError, ShapeError
from .geometry import LanePolyline, SampleGrid, lane_x_at

WORKING_STRIDE = 4


def working_to_full(idx) -> np.ndarray:
    """Full-resolution center coordinate of a working-grid index."""
    return np.asarray(idx, dtype=np.float64) * WORKING_STRIDE + (WORKING_STRIDE - 1) / 2.0


def full_to_working(coord) -> np.ndarray:
    """Working-grid coordinate of a full-resolution position."""
    return (np.asarray(coord, dtype=np.float64) - (WORKING_STRIDE - 1) / 2.0) / WORKING_STRIDE


@dataclass(frozen=True)
class NmsConfig:
    prob_threshold: float = 0.5
    removal_halfwidth: float = 4.0
    mask_halfwidth: float = 2.0
    max_lanes: int = 6

    def __post_init__(self):
        if not (0.0 < self.prob_threshold < 1.0):
            raise ConfigError(f"prob_threshold must be in (0,1), got {self.prob_threshold}")
        if self.removal_halfwidth < 1 or self.mask_halfwidth < 1:
            raise ConfigError("halfwidths must be >= 1")
        if self.max_lanes < 1:
            raise ConfigError("max_lanes must be >= 1")


@dataclass
class Detection:
    """One selected lane: full-resolution polyline plus its seed evidence."""

    lane: LanePolyline
    score: float
    coeff: np.ndarray
    seed_pixel: tuple


def curve_working_x(lane_px: LanePolyline, grid: SampleGrid, wh: int) -> np.ndarray:
    """Working-grid x of a full-res curve at each working row; NaN off-curve.

    A row counts only when it falls inside the curve's vertical extent and
    the curve's x there is inside the frame (off-frame rows are skipped).
    """
    ys = working_to_full(np.arange(wh))
    x_full, in_span = lane_x_at(lane_px, grid, ys)
    ok = in_span & (x_full >= 0.0) & (x_full <= grid.w - 1.0)
    out = np.full(wh, np.nan)
    out[ok] = full_to_working(x_full[ok])
    return out


def _suppress_curve(suppressed: np.ndarray, lane_px, grid, halfwidth: float):
    wh, ww = suppressed.shape
    cols = np.arange(ww, dtype=np.float64)
    xw = curve_working_x(lane_px, grid, wh)
    for i in range(wh):
        if np.isnan(xw[i]):
            continue
        suppressed[i] |= np.abs(cols - xw[i]) <= halfwidth


def _as_map(arr, name: str, channels=None) -> np.ndarray:
    a = np.asarray(getattr(arr, "data", arr), dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or (channels is not None and a.shape[0] != channels):
        raise ShapeError(f"{name} must be ({channels or 'C'}, H, W), got {a.shape}")
    return a


def nms(p, c, basis: EigenlaneBasis, cfg: NmsConfig) -> list:
    """Select lanes from probability map p and coefficient map c.

    Loop: global argmax of p over unsuppressed pixels (row-major order
    breaks ties lexicographically); stop when the peak is <= prob_threshold
    or max_lanes is reached; decode the peak's coefficients into a curve and
    suppress every pixel within removal_halfwidth of it at each in-frame
    row.  The seed pixel itself is always suppressed, so each iteration
    strictly shrinks the candidate set.
    """
    p = _as_map(p, "p", 1)[0]
    c = _as_map(c, "c", basis.m)
    if p.shape != c.shape[1:]:
        raise ShapeError(f"p {p.shape} and c {c.shape} disagree spatially")
    wh, ww = p.shape
    masked = p.copy()
    suppressed = np.zeros((wh, ww), dtype=bool)
    dets = []
    while len(dets) < cfg.max_lanes:
        flat = masked.argmax()
        i, j = int(flat // ww), int(flat % ww)
        score = float(masked[i, j])
        if score <= cfg.prob_threshold:
            break
        coeff = c[:, i, j].copy()
        lane_px = LanePolyline.full(decode(coeff, basis).xs * basis.x_scale)
        _suppress_curve(suppressed, lane_px, basis.grid, cfg.removal_halfwidth)
        suppressed[i, j] = True
        masked[suppressed] = -np.inf
        dets.append(Detection(lane_px, score, coeff, (i, j)))
    return dets


def lane_mask(dets: list, grid: SampleGrid, mask_halfwidth: float) -> np.ndarray:
    """Union of detected curves as a binary (1, H, W) working-grid raster."""
    wh, ww = grid.h // WORKING_STRIDE, grid.w // WORKING_STRIDE
    mask = np.zeros((wh, ww), dtype=bool)
    for det in dets:
        _suppress_curve(mask, det.lane, grid, mask_halfwidth)
    return mask[None].astype(np.float64)
