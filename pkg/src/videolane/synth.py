"""Deterministic synthetic road videos with exact lane ground truth.

Each clip renders a family of quadratic lane markings, x(y') = a + b*y' + c*y'^2
with y' the normalized vertical coordinate over the annotated extent, as bright
stripes on a panning textured road.  Ego motion is a constant per-clip
horizontal drift (plus an optional scale factor applied to lane geometry);
occluders are textured rectangles that track a chosen lane over a span of
consecutive frames.  Ground truth is the ideal curve, occluded or not, with
track ids persistent for the lane's whole visible lifetime.

All randomness comes from one generator seeded per clip, so identical configs
produce bitwise-identical clips.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataio import (
    AnnotationRecord,
    LaneRecord,
    save_frame,
    write_annotations,
    write_manifest,
)
from .errors import ConfigError
from .geometry import LanePolyline, SampleGrid, rasterize_stripe

PROFILES = ("easy", "occluded", "night")

# Lanes need this much clearance from each other and from the frame border
# so that stripes stay resolvable at the working resolution.
MIN_LANE_SEP = 26.0
EDGE_MARGIN = 24.0
# A lane enters a frame's ground truth only while most of it is in view.
MIN_VISIBLE_FRACTION = 0.6


@dataclass(frozen=True)
class SceneConfig:
    """Everything that determines a clip, plus the seed."""

    width: int = 160
    height: int = 64
    n_frames: int = 9
    n_points: int = 12
    y_top: float = 20.0
    y_bottom: float = 63.0
    n_lanes: tuple = (2, 4)
    slope: tuple = (-8.0, 8.0)
    curvature: tuple = (-6.0, 6.0)
    drift: tuple = (-1.2, 1.2)
    scale: tuple = (1.0, 1.0)
    occluders: tuple = (0, 0)
    occlusion_fraction: float = 0.35
    occluder_halfwidth: tuple = (7.0, 12.0)
    occluder_opacity: float = 1.0
    dash_period: float = 0.0
    marking_width: float = 2.5
    marking_brightness: float = 0.85
    noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise ConfigError(f"frame too small: {self.width}x{self.height}")
        if self.width % 4 or self.height % 4:
            raise ConfigError("frame dimensions must be multiples of 4")
        if self.n_frames < 1:
            raise ConfigError(f"n_frames must be >= 1, got {self.n_frames}")
        if self.n_points < 2:
            raise ConfigError(f"n_points must be >= 2, got {self.n_points}")
        if not (0 <= self.y_top < self.y_bottom <= self.height - 1):
            raise ConfigError(
                f"need 0 <= y_top < y_bottom <= {self.height - 1}, "
                f"got [{self.y_top}, {self.y_bottom}]"
            )
        for name in ("n_lanes", "slope", "curvature", "drift", "scale",
                     "occluders", "occluder_halfwidth"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} range not well-ordered: ({lo}, {hi})")
        if self.n_lanes[0] < 1:
            raise ConfigError("need at least one lane")
        if self.occluders[0] < 0:
            raise ConfigError("occluder count cannot be negative")
        if not 0.0 <= self.occlusion_fraction <= 1.0:
            raise ConfigError(
                f"occlusion_fraction must be in [0, 1], got {self.occlusion_fraction}"
            )
        if not 0.0 <= self.occluder_opacity <= 1.0:
            raise ConfigError(
                f"occluder_opacity must be in [0, 1], got {self.occluder_opacity}"
            )
        if self.scale[0] <= 0:
            raise ConfigError("scale must stay positive")
        if self.marking_width < 1:
            raise ConfigError("marking_width must be >= 1")
        if not 0.0 <= self.marking_brightness <= 1.0:
            raise ConfigError("marking_brightness must be in [0, 1]")
        if self.noise < 0 or self.dash_period < 0:
            raise ConfigError("noise and dash_period cannot be negative")

    def grid(self) -> SampleGrid:
        return SampleGrid(
            n=self.n_points, y_top=self.y_top, y_bottom=self.y_bottom,
            h=self.height, w=self.width,
        )


@dataclass
class SynthClip:
    """Rendered frames plus per-frame ground truth and occlusion masks.

    gt[t] is a list of (track_id, LanePolyline) pairs; ids are assigned
    left to right in frame 0 and persist for the clip.
    """

    frames: list
    gt: list
    occlusion: list
    grid: SampleGrid
    config: SceneConfig


@dataclass
class _Occluder:
    lane: int         # lane index the box tracks, or -1 for a free-standing box
    x0: float         # center at t=0 when free-standing (drifts with the scene)
    span_pad: float   # fake lane-span width so free boxes match attached ones
    t0: int
    t1: int          # exclusive
    y0: int
    y1: int          # inclusive
    margin_lo: float  # extra coverage beyond the marking, left side
    margin_hi: float  # right side; asymmetric so edges do not reveal lane x
    tile: np.ndarray  # static fill texture, (rows, some width)


def _lane_positions(rng, n: int, width: int) -> np.ndarray:
    """Sorted lane anchor positions with minimum separation."""
    lo, hi = EDGE_MARGIN, width - 1 - EDGE_MARGIN
    for _ in range(200):
        a = np.sort(rng.uniform(lo, hi, n))
        if n == 1 or np.diff(a).min() >= MIN_LANE_SEP:
            return a
    return np.linspace(lo, hi, n)  # crowded config: fall back to even spacing


def _lane_x(a, b, c, yf, drift_t, scale_t, cx):
    """Lane x at normalized rows yf after frame t's ego motion."""
    x = a + b * yf + c * yf * yf + drift_t
    return cx + (x - cx) * scale_t


def _road_texture(rng, h: int, w: int) -> np.ndarray:
    """Static road surface: dark base, vertical falloff, blocky texture."""
    grad = np.linspace(0.0, 1.0, h)[:, None]
    coarse = rng.normal(0.0, 1.0, (h // 4 + 1, w // 4 + 1))
    coarse = np.kron(coarse, np.ones((4, 4)))[:h, :w]
    fine = rng.normal(0.0, 1.0, (h, w))
    return np.clip(0.10 + 0.05 * grad + 0.04 * coarse + 0.015 * fine, 0.0, 1.0)


def generate_clip(cfg: SceneConfig) -> SynthClip:
    """Render one clip.  Pure in (config, seed)."""
    rng = np.random.default_rng(cfg.seed)
    h, w, t_total = cfg.height, cfg.width, cfg.n_frames
    grid = cfg.grid()
    cx = (w - 1) / 2.0

    # scene sampling, in a fixed order
    n = int(rng.integers(cfg.n_lanes[0], cfg.n_lanes[1] + 1))
    anchors = _lane_positions(rng, n, w)
    b0 = rng.uniform(*cfg.slope)
    c0 = rng.uniform(*cfg.curvature)
    slopes = b0 + rng.uniform(-3.0, 3.0, n)
    curvatures = c0 + rng.uniform(-1.5, 1.5, n)
    drift = rng.uniform(*cfg.drift)
    scale = rng.uniform(*cfg.scale)
    dash_phases = rng.uniform(0.0, cfg.dash_period + 1.0, n)

    y0_row = int(np.ceil(cfg.y_top - 1e-9))
    y1_row = int(np.floor(cfg.y_bottom + 1e-9))
    n_rows = y1_row - y0_row + 1
    occluders = _sample_occluders(rng, cfg, n, y0_row, n_rows)

    pad = int(np.ceil(abs(drift) * (t_total - 1))) + 2
    texture = _road_texture(rng, h, w + 2 * pad)

    ys = np.arange(y0_row, y1_row + 1)
    yf_rows = (ys - cfg.y_top) / (cfg.y_bottom - cfg.y_top)
    yf_grid = (grid.rows() - cfg.y_top) / (cfg.y_bottom - cfg.y_top)
    cols = np.arange(w)

    frames, gts, masks = [], [], []
    for t in range(t_total):
        drift_t = drift * t
        scale_t = scale**t

        # pan the road texture with the scene
        src = cols - drift_t + pad
        i0 = np.floor(src).astype(int)
        f = src - i0
        gray = texture[:, i0] * (1.0 - f) + texture[:, i0 + 1] * f

        for li in range(n):
            x = _lane_x(anchors[li], slopes[li], curvatures[li],
                        yf_rows, drift_t, scale_t, cx)
            on = np.ones(ys.shape, dtype=bool)
            if cfg.dash_period > 0:
                on = ((ys + dash_phases[li]) % cfg.dash_period) < cfg.dash_period / 2.0
            lo = np.ceil(x - cfg.marking_width / 2.0 - 1e-9).astype(int)
            hi = np.ceil(x + cfg.marking_width / 2.0 - 1e-9).astype(int) - 1
            for ri, y in enumerate(ys):
                if not on[ri]:
                    continue
                a_, b_ = max(lo[ri], 0), min(hi[ri], w - 1)
                if a_ <= b_:
                    gray[y, a_ : b_ + 1] = np.maximum(
                        gray[y, a_ : b_ + 1], cfg.marking_brightness
                    )

        mask = np.zeros((h, w), dtype=bool)
        for occ in occluders:
            if not occ.t0 <= t < occ.t1:
                continue
            yo = np.arange(occ.y0, occ.y1 + 1)
            yfo = (yo - cfg.y_top) / (cfg.y_bottom - cfg.y_top)
            if occ.lane >= 0:
                xo = _lane_x(anchors[occ.lane], slopes[occ.lane],
                             curvatures[occ.lane], yfo, drift_t, scale_t, cx)
            else:
                x_c = cx + (occ.x0 + drift_t - cx) * scale_t
                xo = np.array([x_c - occ.span_pad / 2.0, x_c + occ.span_pad / 2.0])
            c_lo = int(np.floor(xo.min() - cfg.marking_width / 2.0 - occ.margin_lo))
            c_hi = int(np.ceil(xo.max() + cfg.marking_width / 2.0 + occ.margin_hi))
            c_lo, c_hi = max(c_lo, 0), min(c_hi, w - 1)
            if c_lo > c_hi:
                continue
            fill = occ.tile[:, : c_hi - c_lo + 1]
            if fill.shape[1] < c_hi - c_lo + 1:
                reps = int(np.ceil((c_hi - c_lo + 1) / occ.tile.shape[1]))
                fill = np.tile(occ.tile, (1, reps))[:, : c_hi - c_lo + 1]
            region = gray[occ.y0 : occ.y1 + 1, c_lo : c_hi + 1]
            gray[occ.y0 : occ.y1 + 1, c_lo : c_hi + 1] = (
                cfg.occluder_opacity * fill + (1.0 - cfg.occluder_opacity) * region
            )
            mask[occ.y0 : occ.y1 + 1, c_lo : c_hi + 1] = True

        img = np.repeat(gray[None], 3, axis=0)
        img = img + rng.normal(0.0, cfg.noise, (3, h, w))
        frames.append(np.clip(img, 0.0, 1.0))
        masks.append(mask)

        frame_gt = []
        for li in range(n):
            xs = _lane_x(anchors[li], slopes[li], curvatures[li],
                         yf_grid, drift_t, scale_t, cx)
            valid = (xs >= 0.0) & (xs <= w - 1.0)
            if valid.mean() >= MIN_VISIBLE_FRACTION:
                frame_gt.append((li, LanePolyline(xs, valid)))
        gts.append(frame_gt)

    return SynthClip(frames, gts, masks, grid, cfg)


def _sample_occluders(rng, cfg: SceneConfig, n_lanes: int,
                      y0_row: int, n_rows: int) -> list:
    count = int(rng.integers(cfg.occluders[0], cfg.occluders[1] + 1))
    out = []
    h_rows = int(np.round(cfg.occlusion_fraction * n_rows))
    for j in range(count):
        if h_rows < 1:
            break
        # half the boxes stand on empty road, so a box alone does not imply
        # a lane behind it; the first box always covers a lane to guarantee
        # at least one real occlusion event per clip
        lane = int(rng.integers(0, n_lanes))
        x0 = float(rng.uniform(EDGE_MARGIN * 0.5, cfg.width - EDGE_MARGIN * 0.5))
        span_pad = float(rng.uniform(0.0, 6.0))
        if j > 0 and rng.random() < 0.5:
            lane = -1
        dur = int(rng.integers(3, min(5, cfg.n_frames) + 1))
        # keep the final frame clear when possible so hidden lanes reappear
        t0_hi = max(cfg.n_frames - dur, 2)
        t0 = int(rng.integers(1, t0_hi)) if cfg.n_frames > 1 else 0
        r0 = int(rng.integers(0, n_rows - h_rows + 1))
        hw = rng.uniform(*cfg.occluder_halfwidth)
        # asymmetric side margins: the box always covers the marking, but
        # neither edge sits at a fixed offset from the lane, so the box
        # geometry carries little information about the hidden x position
        m_lo, m_hi = rng.uniform(2.0, 2.0 + 2.0 * hw, size=2)
        tile_w = 2 * int(np.ceil(2.0 * hw + 8)) + 1
        tile = np.clip(
            0.24 + 0.05 * rng.normal(0.0, 1.0, (h_rows, tile_w)), 0.0, 1.0
        )
        out.append(_Occluder(lane, x0, span_pad, t0, min(t0 + dur, cfg.n_frames),
                             y0_row + r0, y0_row + r0 + h_rows - 1,
                             m_lo, m_hi, tile))
    return out


def lane_occlusion_fraction(clip: SynthClip, frame: int, track_id: int) -> float:
    """Fraction of a GT lane's raster rows touched by that frame's occlusion mask."""
    lanes = dict(clip.gt[frame])
    stripe = rasterize_stripe(lanes[track_id], clip.config.marking_width, clip.grid)
    covered = np.logical_and(stripe, clip.occlusion[frame]).any(axis=1)
    present = stripe.any(axis=1)
    return float(covered.sum()) / float(present.sum())


# -- benchmark datasets ------------------------------------------------------


def profile_config(profile: str, seed: int = 0) -> SceneConfig:
    if profile == "easy":
        return SceneConfig(seed=seed)
    if profile == "occluded":
        # boxes hide the full marked extent of a lane for a few frames, so a
        # single-frame detector has no evidence while the lane is covered
        return SceneConfig(seed=seed, occluders=(2, 3), occlusion_fraction=1.0,
                           occluder_halfwidth=(12.0, 18.0))
    if profile == "night":
        return SceneConfig(seed=seed, marking_brightness=0.45, noise=0.03)
    raise ConfigError(f"unknown profile {profile!r}, expected one of {PROFILES}")


def clip_records(clip: SynthClip, video: str) -> list:
    return [
        AnnotationRecord(
            video=video,
            frame=t,
            grid=clip.grid,
            lanes=[LaneRecord(tid, lane.xs, lane.valid) for tid, lane in frame_gt],
        )
        for t, frame_gt in enumerate(clip.gt)
    ]


def generate_benchmark(out_dir, profile: str, n_clips: int, seed: int,
                       overrides: dict | None = None) -> dict:
    """Write n_clips rendered clips plus annotations and a manifest.

    Layout: <out>/manifest.json, <out>/annotations.txt,
    <out>/clips/<clip_id>/frame_<t>.png.  The same (profile, n_clips, seed)
    always produces byte-identical files.
    """
    if n_clips < 0:
        raise ConfigError(f"n_clips cannot be negative, got {n_clips}")
    base = profile_config(profile, seed)
    if overrides:
        known = {f.name for f in dataclasses.fields(SceneConfig)}
        bad = set(overrides) - known
        if bad:
            raise ConfigError(f"unknown SceneConfig fields: {sorted(bad)}")
        base = replace(base, **overrides)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records, clip_entries = [], []
    for i in range(n_clips):
        cfg = replace(base, seed=seed * 1_000_003 + i)
        clip = generate_clip(cfg)
        clip_id = f"clip_{i:04d}"
        clip_dir = out / "clips" / clip_id
        clip_dir.mkdir(parents=True, exist_ok=True)
        frame_paths = []
        for t, frame in enumerate(clip.frames):
            rel = f"clips/{clip_id}/frame_{t:03d}.png"
            save_frame(out / rel, frame)
            frame_paths.append(rel)
        records.extend(clip_records(clip, clip_id))
        clip_entries.append({"id": clip_id, "frames": frame_paths})

    grid = base.grid()
    manifest = {
        "profile": profile,
        "n_clips": n_clips,
        "seed": seed,
        "width": base.width,
        "height": base.height,
        "n_frames": base.n_frames,
        "grid": {"n": grid.n, "y_top": grid.y_top, "y_bottom": grid.y_bottom,
                 "h": grid.h, "w": grid.w},
        "annotations": "annotations.txt",
        "clips": clip_entries,
    }
    write_annotations(out / "annotations.txt", records)
    write_manifest(out / "manifest.json", manifest)
    return manifest
