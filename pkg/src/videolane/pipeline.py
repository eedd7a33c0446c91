"""End-to-end plumbing: dataset preparation, training drivers, inference,
evaluation reports, and checkpoint packing.

Everything here is deterministic given a RunConfig: the CLI and the
experiment scripts call these functions and nothing else.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .completion import complete_lanes
from .config import RunConfig
from .dataio import AnnotationRecord, LaneRecord, load_tensors, save_tensors
from .eigenlane import EigenlaneBasis, build_basis
from .errors import EmptyDataset, SchemaError
from .geometry import LanePolyline, SampleGrid
from .ild import IldParams, IldTrainConfig, ild_forward, train_ild
from .metrics import f1_scores, match_frame, video_rates
from .nms import NmsConfig, nms
from .nn import load_named
from .pld import (
    AblationFlags,
    FrameState,
    PldParams,
    PldTrainConfig,
    _pld_forward,
    ild_first_frame,
    run_video,
    train_pld,
)

REPORT_FIELDS = ("f1_050", "f1_080", "miou", "rf_050", "rm_050", "rf_080", "rm_080")


# -- config adapters ---------------------------------------------------------


def nms_config(cfg: RunConfig) -> NmsConfig:
    return NmsConfig(cfg.prob_threshold, cfg.removal_halfwidth,
                     cfg.mask_halfwidth, cfg.max_lanes)


def ablation_flags(cfg: RunConfig) -> AblationFlags:
    return AblationFlags(cfg.no_warp, cfg.no_guidance, cfg.no_reuse)


def ild_train_config(cfg: RunConfig) -> IldTrainConfig:
    return IldTrainConfig(
        epochs=cfg.ild_epochs, lr=cfg.ild_lr, momentum=cfg.momentum,
        seed=cfg.seed, alpha=cfg.alpha, gamma=cfg.gamma, e=cfg.liou_e,
        gt_width=cfg.gt_width, reg_weight=cfg.reg_weight,
        cosine_decay=cfg.cosine_decay,
    )


def pld_train_config(cfg: RunConfig) -> PldTrainConfig:
    return PldTrainConfig(
        epochs=cfg.pld_epochs, lr=cfg.pld_lr, momentum=cfg.momentum,
        seed=cfg.seed, flow_weight=cfg.flow_weight, alpha=cfg.alpha,
        gamma=cfg.gamma, e=cfg.liou_e, gt_width=cfg.gt_width,
        reg_weight=cfg.reg_weight, cosine_decay=cfg.cosine_decay,
        s=cfg.s, nms=nms_config(cfg),
    )


# -- annotation handling -----------------------------------------------------


def shared_grid(records: list) -> SampleGrid:
    grids = {r.grid for r in records}
    if len(grids) != 1:
        raise SchemaError(f"records use {len(grids)} different grids, need one")
    return next(iter(grids))


def group_by_video(records: list) -> dict:
    out = {}
    for rec in records:
        out.setdefault(rec.video, []).append(rec)
    for recs in out.values():
        recs.sort(key=lambda r: r.frame)
    return out


def complete_records(records: list, cfg: RunConfig) -> list:
    """ALS-fill every invalid lane sample, one matrix per video."""
    if not records:
        return []
    grid = shared_grid(records)
    filled = {}  # (video, frame, lane position) -> LanePolyline
    for video, recs in group_by_video(records).items():
        keys, lanes = [], []
        for rec in recs:
            for j, lrec in enumerate(rec.lanes):
                keys.append((rec.frame, j))
                lanes.append(LanePolyline(lrec.xs, lrec.valid))
        done = complete_lanes(lanes, grid, rank=cfg.rank, lam=cfg.ridge,
                              max_iters=cfg.als_max_iters, tol=cfg.als_tol,
                              seed=cfg.seed)
        for key, lane in zip(keys, done):
            filled[(video,) + key] = lane
    out = []
    for rec in records:
        lanes = [
            LaneRecord(l.track_id, filled[(rec.video, rec.frame, j)].xs,
                       filled[(rec.video, rec.frame, j)].valid)
            for j, l in enumerate(rec.lanes)
        ]
        out.append(AnnotationRecord(rec.video, rec.frame, rec.grid, lanes))
    return out


def basis_from_records(records: list, cfg: RunConfig) -> EigenlaneBasis:
    """Fit the lane basis to every fully valid annotated lane."""
    grid = shared_grid(records)
    cols = [
        l.xs for rec in records for l in rec.lanes
        if np.asarray(l.valid, dtype=bool).all()
    ]
    if len(cols) < cfg.m:
        raise EmptyDataset(
            f"need at least m={cfg.m} complete lanes to build a basis, "
            f"got {len(cols)}"
        )
    mat = np.stack(cols, axis=1) / grid.w
    return build_basis(mat, cfg.m, grid, x_scale=float(grid.w))


def _frame_lanes(rec: AnnotationRecord) -> list:
    """Fully valid GT polylines of one frame (partial lanes are skipped;
    run completion first to keep them)."""
    return [
        LanePolyline(l.xs, l.valid) for l in rec.lanes
        if np.asarray(l.valid, dtype=bool).all()
    ]


# -- training ----------------------------------------------------------------


def ild_dataset(clips: list) -> list:
    return [
        (frame, _frame_lanes(rec))
        for clip in clips
        for frame, rec in zip(clip.frames, clip.records)
    ]


def pld_units(clips: list, stride: int) -> list:
    units = []
    for clip in clips:
        for t in range(0, len(clip.frames) - 2, stride):
            units.append((
                clip.frames[t : t + 3],
                [_frame_lanes(rec) for rec in clip.records[t : t + 3]],
            ))
    return units


def run_train_ild(clips: list, basis: EigenlaneBasis, cfg: RunConfig, log=None):
    dataset = ild_dataset(clips)
    params = IldParams.init(k=cfg.k, m=cfg.m, seed=cfg.seed)
    return train_ild(dataset, basis, basis.grid, ild_train_config(cfg),
                     params=params, log=log)


def run_train_pld(clips: list, ild_params: IldParams, basis: EigenlaneBasis,
                  cfg: RunConfig, log=None):
    units = pld_units(clips, cfg.unit_stride)
    params = PldParams.init(k=cfg.k, s=cfg.s, seed=cfg.seed)
    return train_pld(units, ild_params, basis, pld_train_config(cfg),
                     params=params, ablation=ablation_flags(cfg), log=log)


# -- inference ---------------------------------------------------------------


def detections_to_record(video: str, frame: int, grid: SampleGrid,
                         dets: list) -> AnnotationRecord:
    lanes = [
        LaneRecord(i, d.lane.xs, d.lane.valid) for i, d in enumerate(dets)
    ]
    return AnnotationRecord(video, frame, grid, lanes)


def infer_clip_ild(frames: list, ild_params: IldParams, basis: EigenlaneBasis,
                   cfg: RunConfig) -> list:
    """Per-frame single-image detection, no temporal state."""
    ncfg = nms_config(cfg)
    out = []
    for frame in frames:
        _, p, c = ild_forward(Tensor(np.asarray(frame)), ild_params)
        out.append(nms(p, c, basis, ncfg))
    return out


def infer_clip_rvld(frames: list, ild_params: IldParams, pld_params: PldParams,
                    basis: EigenlaneBasis, cfg: RunConfig,
                    collect_flows: bool = False):
    """Recursive detection over a clip; optionally keep the motion fields.

    Returns (per-frame detections, per-frame working-resolution flows or
    None).  Frame 0 has no flow (it runs the single-frame path).
    """
    ncfg, flags = nms_config(cfg), ablation_flags(cfg)
    if not collect_flows:
        return run_video(frames, ild_params, pld_params, basis, ncfg, flags), None
    dets_all, flows = [], [None]
    dets, _, state = ild_first_frame(frames[0], ild_params, basis, ncfg)
    dets_all.append(dets)
    for frame in frames[1:]:
        out = _pld_forward(state, frame, ild_params, pld_params, basis, ncfg, flags)
        feats = out["xtilde"] if flags.no_reuse else out["x"]
        state = FrameState(feats.detach(), out["mask"].detach())
        dets_all.append(out["dets"])
        flows.append(out["flow"].data.copy())
    return dets_all, flows


def infer_clips(clips: list, ild_params: IldParams, pld_params,
                basis: EigenlaneBasis, cfg: RunConfig,
                collect_flows: bool = False):
    """All clips -> (prediction records, {"video.frame" -> flow} or None)."""
    records, flow_map = [], {} if collect_flows else None
    for clip in clips:
        if pld_params is None:
            dets_all, flows = infer_clip_ild(clip.frames, ild_params, basis, cfg), None
        else:
            dets_all, flows = infer_clip_rvld(
                clip.frames, ild_params, pld_params, basis, cfg, collect_flows
            )
        for t, dets in enumerate(dets_all):
            records.append(detections_to_record(clip.id, t, basis.grid, dets))
            if collect_flows and flows is not None and flows[t] is not None:
                flow_map[f"{clip.id}.{t:03d}"] = flows[t]
    return records, flow_map


def flow_to_full(flow_working: np.ndarray) -> np.ndarray:
    """Working-resolution flow -> full-resolution pixel flow for display."""
    up = np.repeat(np.repeat(flow_working, 4, axis=1), 4, axis=2)
    return up * 4.0


# -- evaluation --------------------------------------------------------------


def evaluate_predictions(pred_records: list, gt_records: list,
                         cfg: RunConfig) -> dict:
    """Match predictions to GT at IoU 0.5 and 0.8 and fill the report fields."""
    grid = shared_grid(gt_records)
    gt_videos = group_by_video(gt_records)
    pred_videos = group_by_video(pred_records)
    if set(gt_videos) != set(pred_videos):
        missing = set(gt_videos) ^ set(pred_videos)
        raise SchemaError(f"prediction/GT videos differ: {sorted(missing)}")
    evals = {0.5: [], 0.8: []}
    n_frames = 0
    for video in sorted(gt_videos):
        gts, preds = gt_videos[video], pred_videos[video]
        if [r.frame for r in gts] != [r.frame for r in preds]:
            raise SchemaError(f"frame indices differ for video {video}")
        n_frames += len(gts)
        for tau in evals:
            evals[tau].append([
                match_frame(
                    [LanePolyline(l.xs, l.valid) for l in pred.lanes],
                    [(l.track_id, LanePolyline(l.xs, l.valid)) for l in gt.lanes],
                    tau, grid, cfg.stripe_width,
                )
                for pred, gt in zip(preds, gts)
            ])
    flat5 = [e for video in evals[0.5] for e in video]
    flat8 = [e for video in evals[0.8] for e in video]
    p5, r5, f5, miou = f1_scores(flat5, 0.5)
    p8, r8, f8, _ = f1_scores(flat8, 0.8)
    rf5, rm5 = video_rates(evals[0.5], 0.5)
    rf8, rm8 = video_rates(evals[0.8], 0.8)
    return {
        "f1_050": f5, "f1_080": f8, "miou": miou,
        "rf_050": rf5, "rm_050": rm5, "rf_080": rf8, "rm_080": rm8,
        "precision_050": p5, "recall_050": r5,
        "precision_080": p8, "recall_080": r8,
        "n_frames": n_frames,
    }


# -- checkpoints -------------------------------------------------------------


def save_basis_checkpoint(path, basis: EigenlaneBasis):
    g = basis.grid
    save_tensors(path, {
        "u": basis.u,
        "singular_values": basis.singular_values,
        "meta.grid": np.array([g.n, g.y_top, g.y_bottom, g.h, g.w], dtype=np.float64),
        "meta.x_scale": np.float64(basis.x_scale),
    })


def load_basis_checkpoint(path) -> EigenlaneBasis:
    data = load_tensors(path)
    try:
        n, y_top, y_bottom, h, w = data["meta.grid"]
        grid = SampleGrid(int(n), float(y_top), float(y_bottom), int(h), int(w))
        return EigenlaneBasis(data["u"], data["singular_values"], grid,
                              float(data["meta.x_scale"]))
    except KeyError as e:
        raise SchemaError(f"{path}: missing basis field {e}") from e


def _save_params(path, params, meta: dict):
    tensors = {name: t.data for name, t in params.named().items()}
    tensors.update({k: np.float64(v) for k, v in meta.items()})
    save_tensors(path, tensors)


def _split_meta(data: dict) -> tuple:
    weights = {k: v for k, v in data.items() if not k.startswith("meta.")}
    meta = {k: v for k, v in data.items() if k.startswith("meta.")}
    return weights, meta


def save_ild_checkpoint(path, params: IldParams):
    _save_params(path, params, {"meta.k": params.k, "meta.m": params.m})


def load_ild_checkpoint(path) -> IldParams:
    weights, meta = _split_meta(load_tensors(path))
    try:
        params = IldParams.init(k=int(meta["meta.k"]), m=int(meta["meta.m"]), seed=0)
    except KeyError as e:
        raise SchemaError(f"{path}: missing checkpoint field {e}") from e
    load_named(params.named(), weights)
    return params


def save_pld_checkpoint(path, params: PldParams):
    _save_params(path, params, {"meta.k": params.k, "meta.s": params.s})


def load_pld_checkpoint(path) -> PldParams:
    weights, meta = _split_meta(load_tensors(path))
    try:
        params = PldParams.init(k=int(meta["meta.k"]), s=int(meta["meta.s"]), seed=0)
    except KeyError as e:
        raise SchemaError(f"{path}: missing checkpoint field {e}") from e
    load_named(params.named(), weights)
    return params
