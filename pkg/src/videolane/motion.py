"""Motion estimation between adjacent frames and differentiable warping.

A local-correlation cost volume compares current features against previous
features over displacements d in [-s, s]^2, a small conv head regresses a
down-sampled motion field from it, and backward warping aligns previous
maps to the current frame.  All pieces are differentiable through the
autodiff engine.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    Tensor,
    _accum,
    _make,
    as_tensor,
    bilinear_resize,
    concat_channels,
    softmax_channels,
)
from .errors import ShapeError
from .nn import apply_stack

# score for out-of-bounds correlation candidates; softmax maps it to ~0
OOB_SCORE = -1e9

DEFAULT_S = 3


def displacement_channel(dy: int, dx: int, s: int) -> int:
    """Row-major channel index of displacement (dy, dx), from (-s,-s) to (s,s)."""
    return (dy + s) * (2 * s + 1) + (dx + s)


def channel_displacement(ch: int, s: int) -> tuple[int, int]:
    d = 2 * s + 1
    return ch // d - s, ch % d - s


def local_correlation(xt, xprev, s: int = DEFAULT_S) -> Tensor:
    """Raw cost volume: channel (dy,dx) holds Xprev(x+d)ᵀ·Xt(x), (D², H, W).

    Candidates whose source pixel falls outside the frame score OOB_SCORE.
    """
    xt, xprev = as_tensor(xt), as_tensor(xprev)
    if xt.ndim != 3 or xt.shape != xprev.shape:
        raise ShapeError(f"feature shapes differ: {xt.shape} vs {xprev.shape}")
    if s < 1:
        raise ShapeError(f"s must be >= 1, got {s}")
    k, h, w = xt.shape
    d = 2 * s + 1
    data = np.full((d * d, h, w), OOB_SCORE)
    regions = []
    for dy in range(-s, s + 1):
        for dx in range(-s, s + 1):
            ch = displacement_channel(dy, dx, s)
            i0, i1 = max(0, -dy), min(h, h - dy)
            j0, j1 = max(0, -dx), min(w, w - dx)
            if i0 >= i1 or j0 >= j1:
                continue
            cur = (slice(None), slice(i0, i1), slice(j0, j1))
            prev = (slice(None), slice(i0 + dy, i1 + dy), slice(j0 + dx, j1 + dx))
            data[ch, i0:i1, j0:j1] = (xprev.data[prev] * xt.data[cur]).sum(axis=0)
            regions.append((ch, cur, prev))

    def back(g):
        gt = np.zeros_like(xt.data) if xt.requires_grad else None
        gp = np.zeros_like(xprev.data) if xprev.requires_grad else None
        for ch, cur, prev in regions:
            gch = g[ch, cur[1], cur[2]][None]
            if gt is not None:
                gt[cur] += gch * xprev.data[prev]
            if gp is not None:
                gp[prev] += gch * xt.data[cur]
        if gt is not None:
            _accum(xt, gt)
        if gp is not None:
            _accum(xprev, gp)

    return _make(data, (xt, xprev), back)


def normalize_volume(raw) -> Tensor:
    """Per-pixel softmax over the displacement channels."""
    return softmax_channels(raw)


def volume_argmax(volume: np.ndarray, s: int) -> np.ndarray:
    """(2, H, W) integer field (dx, dy) of the per-pixel best displacement."""
    best = volume.argmax(axis=0)
    dy = best // (2 * s + 1) - s
    dx = best % (2 * s + 1) - s
    return np.stack([dx, dy])


def motion_head(volume, xt, layers) -> Tensor:
    """Regress a down-sampled 2-channel field from [volume, features].

    Two of the convolutions have stride 2, so the field lives at 1/4 of the
    feature grid; channel 0 is dx, channel 1 is dy, in units of that grid.
    """
    if volume.shape[1:] != xt.shape[1:]:
        raise ShapeError(
            f"volume {volume.shape} and features {xt.shape} disagree spatially"
        )
    return apply_stack(concat_channels(volume, xt), layers, strides=[1, 2, 2])


def upsample_field(f_down, out_h: int, out_w: int) -> Tensor:
    """Bilinear upsample of a motion field with vectors rescaled to out-grid px."""
    return bilinear_resize(f_down, out_h, out_w, scale_values=True)


def backward_warp(src, flow) -> Tensor:
    """Sample src at x + flow(x): (C, H, W) warped toward the flow's frame.

    flow is (2, H, W) with channel 0 = dx (columns) and 1 = dy (rows), in
    pixels of the same grid.  Out-of-bounds samples read 0.  With flow = 0
    every sample lands exactly on its own pixel, so the output is the input
    bit for bit.
    """
    src, flow = as_tensor(src), as_tensor(flow)
    if src.ndim != 3 or flow.ndim != 3 or flow.shape[0] != 2:
        raise ShapeError(f"need (C,H,W) src and (2,H,W) flow, got {src.shape}, {flow.shape}")
    if src.shape[1:] != flow.shape[1:]:
        raise ShapeError(f"src {src.shape} and flow {flow.shape} disagree spatially")
    c, h, w = src.shape
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    sx = jj + flow.data[0]
    sy = ii + flow.data[1]
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx = sx - x0
    fy = sy - y0
    corners = []
    data = np.zeros((c, h, w))
    for yc, wy in ((y0, 1.0 - fy), (y0 + 1, fy)):
        for xc, wx in ((x0, 1.0 - fx), (x0 + 1, fx)):
            inb = (yc >= 0) & (yc < h) & (xc >= 0) & (xc < w)
            ycl = np.clip(yc, 0, h - 1)
            xcl = np.clip(xc, 0, w - 1)
            val = src.data[:, ycl, xcl] * inb
            weight = wy * wx
            data += val * weight
            corners.append((ycl, xcl, inb, val, wy, wx))

    def back(g):
        if src.requires_grad:
            gs = np.zeros_like(src.data)
            for ycl, xcl, inb, _, wy, wx in corners:
                np.add.at(gs, (slice(None), ycl, xcl), g * (wy * wx * inb))
            _accum(src, gs)
        if flow.requires_grad:
            # d/dfx flips the sign of the x-weight; same for y
            gx = np.zeros((h, w))
            gy = np.zeros((h, w))
            for (_, _, _, val, wy, wx), (sgx, sgy) in zip(
                corners, ((-1, -1), (1, -1), (-1, 1), (1, 1))
            ):
                contrib = (g * val).sum(axis=0)
                gx += contrib * sgx * wy
                gy += contrib * sgy * wx
            _accum(flow, np.stack([gx, gy]))

    return _make(data, (src, flow), back)


def flow_loss(gt_prev, gt_cur, flow) -> Tensor:
    """Mean squared error between the warped previous GT map and the current one."""
    gt_prev, gt_cur = as_tensor(gt_prev), as_tensor(gt_cur)
    if gt_prev.shape != gt_cur.shape:
        raise ShapeError(f"GT map shapes differ: {gt_prev.shape} vs {gt_cur.shape}")
    diff = backward_warp(gt_prev, flow) - gt_cur
    return (diff * diff).mean()
