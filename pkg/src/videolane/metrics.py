"""Detection quality metrics.

Image metrics treat each lane as a 30 px wide stripe at full resolution: a
prediction counts once its stripe IoU with a GT lane exceeds tau, matching
greedily by descending IoU, one-to-one.  Video metrics look at GT tracks
present in consecutive frames and classify each pair as stable (detected in
both), flickering (detected in exactly one) or missing (in neither).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrackIdRequired
from .geometry import LanePolyline, SampleGrid, rasterize_stripe, stripe_iou

DEFAULT_STRIPE_WIDTH = 30.0  # full-resolution pixels


@dataclass
class FrameEval:
    """Matching outcome for one frame at one threshold."""

    tp: int
    fp: int
    fn: int
    matched_ious: list
    match_map: dict  # gt id (or position) -> matched pred index, None if missed
    tau: float
    has_track_ids: bool

    def __post_init__(self):
        matched = sum(1 for v in self.match_map.values() if v is not None)
        if not (self.tp == len(self.matched_ious) == matched):
            raise ValueError(
                f"inconsistent FrameEval: tp={self.tp}, "
                f"|ious|={len(self.matched_ious)}, |matched|={matched}"
            )


@dataclass
class VideoEval:
    """Counts of consecutive-frame track pairs by detection outcome."""

    n_s: int = 0
    n_f: int = 0
    n_m: int = 0

    @property
    def n(self) -> int:
        return self.n_s + self.n_f + self.n_m

    def __add__(self, other: "VideoEval") -> "VideoEval":
        return VideoEval(self.n_s + other.n_s, self.n_f + other.n_f, self.n_m + other.n_m)


def _as_id_lane_pairs(gts):
    """GT comes either as bare lanes or as (track id, lane) pairs."""
    pairs, has_ids = [], True
    for i, g in enumerate(gts):
        if isinstance(g, LanePolyline):
            pairs.append((i, g))
            has_ids = False
        else:
            gid, lane = g
            pairs.append((gid, lane))
    if pairs and not has_ids and len(pairs) != len(gts):
        raise ValueError("mixed GT forms")
    return pairs, has_ids


def match_frame(
    preds: list,
    gts: list,
    tau: float,
    grid: SampleGrid,
    stripe_width: float = DEFAULT_STRIPE_WIDTH,
) -> FrameEval:
    """Greedy one-to-one matching by descending stripe IoU, pairs above tau.

    preds are lanes; gts are lanes or (track id, lane) pairs.  Ties break on
    (pred index, gt position), so the result is deterministic.
    """
    gt_pairs, has_ids = _as_id_lane_pairs(gts)
    pred_masks = [rasterize_stripe(lane, stripe_width, grid) for lane in preds]
    gt_masks = [rasterize_stripe(lane, stripe_width, grid) for _, lane in gt_pairs]

    candidates = []
    for pi, pm in enumerate(pred_masks):
        for gi, gm in enumerate(gt_masks):
            iou = stripe_iou(pm, gm)
            if iou > tau:
                candidates.append((-iou, pi, gi))
    candidates.sort()

    match_map = {gid: None for gid, _ in gt_pairs}
    matched_ious = []
    used_preds, used_gts = set(), set()
    for neg_iou, pi, gi in candidates:
        if pi in used_preds or gi in used_gts:
            continue
        used_preds.add(pi)
        used_gts.add(gi)
        match_map[gt_pairs[gi][0]] = pi
        matched_ious.append(-neg_iou)
    tp = len(matched_ious)
    return FrameEval(
        tp=tp,
        fp=len(preds) - tp,
        fn=len(gts) - tp,
        matched_ious=matched_ious,
        match_map=match_map,
        tau=tau,
        has_track_ids=has_ids,
    )


def f1_scores(evals: list, tau: float = None) -> tuple:
    """Aggregate counts over all frames; empty denominators give 0.

    Returns (precision, recall, f1, miou); miou averages the IoU of every
    counted match across the whole set.
    """
    tp = sum(e.tp for e in evals)
    fp = sum(e.fp for e in evals)
    fn = sum(e.fn for e in evals)
    ious = [v for e in evals for v in e.matched_ious]
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    miou = float(np.mean(ious)) if ious else 0.0
    return precision, recall, f1, miou


def pair_counts(videos: list) -> VideoEval:
    """Classify consecutive-frame pairs of every GT track in every video.

    videos: one list of FrameEval per video, in frame order.  A track pairs
    up only when it is annotated at both t-1 and t; a track id seen without
    real ids raises, because cross-frame identity would be meaningless.
    """
    out = VideoEval()
    for frames in videos:
        for e in frames:
            if not e.has_track_ids:
                raise TrackIdRequired("video rates need persistent GT track ids")
        for prev, cur in zip(frames, frames[1:]):
            shared = [gid for gid in prev.match_map if gid in cur.match_map]
            for gid in shared:
                got_prev = prev.match_map[gid] is not None
                got_cur = cur.match_map[gid] is not None
                if got_prev and got_cur:
                    out.n_s += 1
                elif got_prev or got_cur:
                    out.n_f += 1
                else:
                    out.n_m += 1
    return out


def video_rates(videos: list, tau: float = None) -> tuple:
    """(flickering rate, missing rate) over all track pairs in the set.

    With tau given, every FrameEval must have been matched at that tau."""
    if tau is not None:
        for frames in videos:
            for e in frames:
                if e.tau != tau:
                    raise ValueError(f"FrameEval at tau={e.tau}, expected {tau}")
    counts = pair_counts(videos)
    if counts.n == 0:
        return 0.0, 0.0
    return counts.n_f / counts.n, counts.n_m / counts.n
