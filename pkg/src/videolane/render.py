"""Overlay rendering: detected lanes, ground truth, and motion quivers.

Purely presentational; outputs never feed back into the pipeline.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .geometry import LanePolyline, SampleGrid, rasterize_stripe

DET_COLOR = (0.15, 0.9, 0.25)
GT_COLOR = (0.95, 0.3, 0.2)
ARROW_COLOR = (1.0, 1.0, 0.35)
ARROW_SPACING = 8
ARROW_GAIN = 4.0
MIN_ARROW = 0.05


def _paint(img: np.ndarray, mask: np.ndarray, color):
    for ch in range(3):
        img[ch][mask] = color[ch]


def _draw_segment(img: np.ndarray, y0: float, x0: float, y1: float, x1: float, color):
    n = int(max(abs(y1 - y0), abs(x1 - x0)) * 2) + 2
    ys = np.clip(np.rint(np.linspace(y0, y1, n)).astype(int), 0, img.shape[1] - 1)
    xs = np.clip(np.rint(np.linspace(x0, x1, n)).astype(int), 0, img.shape[2] - 1)
    for ch in range(3):
        img[ch, ys, xs] = color[ch]


def render_overlay(
    frame: np.ndarray,
    detections: list,
    gt: list = None,
    motion: np.ndarray = None,
    grid: SampleGrid = None,
    width: float = 3.0,
) -> np.ndarray:
    """Return a copy of the frame with lanes recolored as stripes.

    detections/gt are LanePolylines; exactly their rasterized stripe pixels
    change, so an empty call returns the frame unmodified.  motion is an
    optional (2, H, W) flow (dx, dy) drawn as sparse arrows, magnified for
    visibility.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise ShapeError(f"expected a (3, H, W) frame, got {frame.shape}")
    out = frame.copy()
    h, w = frame.shape[1:]
    if (detections or gt) and grid is None:
        raise ShapeError("lane overlays need the sampling grid")
    if grid is not None and (grid.h, grid.w) != (h, w):
        raise ShapeError(f"grid is {grid.h}x{grid.w} but frame is {h}x{w}")

    for lane in gt or []:
        _paint(out, rasterize_stripe(lane, width, grid), GT_COLOR)
    for lane in detections or []:
        _paint(out, rasterize_stripe(lane, width, grid), DET_COLOR)

    if motion is not None:
        motion = np.asarray(motion, dtype=np.float64)
        if motion.shape != (2, h, w):
            raise ShapeError(f"flow must be (2, {h}, {w}), got {motion.shape}")
        half = ARROW_SPACING // 2
        for y in range(half, h, ARROW_SPACING):
            for x in range(half, w, ARROW_SPACING):
                dx, dy = motion[0, y, x], motion[1, y, x]
                if max(abs(dx), abs(dy)) < MIN_ARROW:
                    continue
                _draw_segment(out, y, x, y + dy * ARROW_GAIN, x + dx * ARROW_GAIN,
                              ARROW_COLOR)
    return out
