"""Predictive lane detector: the video recursion on top of the single-frame
detector.

Each step estimates motion between the previous and current feature maps,
warps the previous refined features and lane mask forward, lifts the warped
mask to guidance features, and fuses [guidance, warped features, current
features] into the refined map that the decoding heads read.  The recursion
is first-order: a step depends only on (previous state, current frame).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import SGD, Tensor, as_tensor, backward, concat_channels
from .eigenlane import EigenlaneBasis
from .errors import EmptyDataset, EmptyVideo, ShapeError
from .ild import (
    DEFAULT_ALPHA,
    DEFAULT_GAMMA,
    DEFAULT_GT_WIDTH,
    DEFAULT_K,
    DEFAULT_LIOU_E,
    IldParams,
    encode_features,
    decode_maps,
    ild_forward,
    ild_loss,
    make_gt_maps,
)
from .motion import (
    DEFAULT_S,
    backward_warp,
    flow_loss,
    local_correlation,
    motion_head,
    normalize_volume,
    upsample_field,
)
from .nms import NmsConfig, lane_mask, nms
from .nn import apply_stack, he_conv, stack_params


@dataclass
class FrameState:
    """What one frame hands to the next: refined features and the hard
    binary lane raster produced by NMS, both on the working grid."""

    features: Tensor
    lane_mask: Tensor

    def __post_init__(self):
        self.features = as_tensor(self.features)
        self.lane_mask = as_tensor(self.lane_mask)
        if self.features.ndim != 3:
            raise ShapeError(f"state features must be (K, H, W), got {self.features.shape}")
        if self.lane_mask.shape != (1,) + self.features.shape[1:]:
            raise ShapeError(
                f"lane mask {self.lane_mask.shape} does not match features "
                f"{self.features.shape}"
            )
        m = self.lane_mask.data
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ShapeError("lane mask must be binary")

    def detach(self) -> "FrameState":
        return FrameState(self.features.detach(), self.lane_mask.detach())


@dataclass(frozen=True)
class AblationFlags:
    """Switch off individual stages of the recursion.

    no_warp: skip motion estimation, reuse the previous maps unwarped;
    no_guidance: feed zero guidance instead of g(warped mask);
    no_reuse: thread the raw encoder features through the state instead of
    the refined ones.
    """

    no_warp: bool = False
    no_guidance: bool = False
    no_reuse: bool = False


@dataclass
class PldParams:
    """Weights of the three trainable stages: mask-to-guidance net g,
    fusion net h, and the motion head."""

    g: list
    h: list
    motion: list
    k: int
    s: int

    @classmethod
    def init(cls, k: int = DEFAULT_K, s: int = DEFAULT_S, seed: int = 0) -> "PldParams":
        rng = np.random.default_rng(seed)
        g = [he_conv(rng, max(k // 2, 1), 1, 3), he_conv(rng, k, max(k // 2, 1), 3)]
        h = [he_conv(rng, k, 3 * k, 3), he_conv(rng, k, k, 3)]
        d2 = (2 * s + 1) ** 2
        motion = [
            he_conv(rng, 32, d2 + k, 3),
            he_conv(rng, 16, 32, 3),
            # zero-init the last layer so the initial motion field is zero
            # and warping starts out as the identity
            he_conv(rng, 2, 16, 3, zero=True),
        ]
        return cls(g, h, motion, k, s)

    def named(self) -> dict:
        return {
            **stack_params("g", self.g),
            **stack_params("h", self.h),
            **stack_params("motion", self.motion),
        }

    def set_trainable(self, flag: bool):
        for t in self.named().values():
            t.requires_grad = flag


def guidance(warped_mask, params: PldParams) -> Tensor:
    """Lift the warped 1-channel lane mask to K-channel guidance features."""
    m = as_tensor(warped_mask)
    if m.ndim != 3 or m.shape[0] != 1:
        raise ShapeError(f"guidance expects a (1, H, W) mask, got {m.shape}")
    return apply_stack(m, params.g)


def refine(g, xwarp, xtilde, params: PldParams) -> Tensor:
    """Fuse [guidance, warped previous features, current features] -> K."""
    g, xwarp, xtilde = as_tensor(g), as_tensor(xwarp), as_tensor(xtilde)
    for name, t in (("guidance", g), ("warped", xwarp), ("current", xtilde)):
        if t.ndim != 3 or t.shape[0] != params.k:
            raise ShapeError(f"{name} features must be ({params.k}, H, W), got {t.shape}")
        if t.shape[1:] != g.shape[1:]:
            raise ShapeError(f"{name} spatial dims {t.shape[1:]} != {g.shape[1:]}")
    return apply_stack(concat_channels(g, xwarp, xtilde), params.h)


def _pld_forward(
    state: FrameState,
    frame,
    ild_params: IldParams,
    pld_params: PldParams,
    basis: EigenlaneBasis,
    nms_cfg: NmsConfig,
    ablation: AblationFlags,
) -> dict:
    """One recursion step with the full graph kept (training wants gradients
    to flow through reused states)."""
    grid = basis.grid
    frame = as_tensor(frame)
    if frame.ndim != 3 or frame.shape != (3, grid.h, grid.w):
        raise ShapeError(
            f"frame {frame.shape} does not match the basis grid ({grid.h}, {grid.w})"
        )
    xtilde = encode_features(frame, ild_params)
    if state.features.shape != xtilde.shape:
        raise ShapeError(
            f"state features {state.features.shape} do not match the frame's "
            f"{xtilde.shape}"
        )
    wh, ww = xtilde.shape[1:]
    if ablation.no_warp:
        flow = Tensor(np.zeros((2, wh, ww)))
        xwarp, lwarp = state.features, state.lane_mask
    else:
        vol = normalize_volume(local_correlation(xtilde, state.features, pld_params.s))
        f_down = motion_head(vol, xtilde, pld_params.motion)
        flow = upsample_field(f_down, wh, ww)
        xwarp = backward_warp(state.features, flow)
        lwarp = backward_warp(state.lane_mask, flow)
    if ablation.no_guidance:
        g = Tensor(np.zeros((pld_params.k, wh, ww)))
    else:
        g = guidance(lwarp, pld_params)
    x = refine(g, xwarp, xtilde, pld_params)
    p, c = decode_maps(x, ild_params)
    dets = nms(p, c, basis, nms_cfg)
    mask = Tensor(lane_mask(dets, grid, nms_cfg.mask_halfwidth))
    return {
        "xtilde": xtilde,
        "flow": flow,
        "x": x,
        "p": p,
        "c": c,
        "dets": dets,
        "mask": mask,
    }


def pld_step(
    state: FrameState,
    frame,
    ild_params: IldParams,
    pld_params: PldParams,
    basis: EigenlaneBasis,
    nms_cfg: NmsConfig = NmsConfig(),
    ablation: AblationFlags = AblationFlags(),
):
    """Detect lanes in one frame given the previous state.

    Returns (detections, probability map, new state); the new state is
    detached so inference over long videos keeps no graph.
    """
    out = _pld_forward(state, frame, ild_params, pld_params, basis, nms_cfg, ablation)
    feats = out["xtilde"] if ablation.no_reuse else out["x"]
    new_state = FrameState(feats.detach(), out["mask"].detach())
    return out["dets"], out["p"].detach(), new_state


def ild_first_frame(
    frame,
    ild_params: IldParams,
    basis: EigenlaneBasis,
    nms_cfg: NmsConfig = NmsConfig(),
):
    """Run the single-frame detector and package its output as a state."""
    x, p, c = ild_forward(as_tensor(frame), ild_params)
    dets = nms(p, c, basis, nms_cfg)
    mask = Tensor(lane_mask(dets, basis.grid, nms_cfg.mask_halfwidth))
    return dets, p, FrameState(x.detach(), mask)


def run_video(
    frames,
    ild_params: IldParams,
    pld_params: PldParams,
    basis: EigenlaneBasis,
    nms_cfg: NmsConfig = NmsConfig(),
    ablation: AblationFlags = AblationFlags(),
    initial_state: FrameState = None,
    return_states: bool = False,
):
    """Detect lanes over a clip: first frame intra-frame, the rest recursive.

    With initial_state given, every frame (including the first) runs through
    the recursion, which is how a video resumes from a saved state.
    """
    if len(frames) == 0:
        raise EmptyVideo("run_video needs at least one frame")
    state = initial_state
    dets_all, states = [], []
    for frame in frames:
        if state is None:
            dets, _, state = ild_first_frame(frame, ild_params, basis, nms_cfg)
        else:
            dets, _, state = pld_step(
                state, frame, ild_params, pld_params, basis, nms_cfg, ablation
            )
        dets_all.append(dets)
        if return_states:
            states.append(state)
    if return_states:
        return dets_all, states
    return dets_all


@dataclass
class PldTrainConfig:
    epochs: int = 2
    lr: float = 1e-2
    momentum: float = 0.9
    seed: int = 0
    flow_weight: float = 1.0
    alpha: float = DEFAULT_ALPHA
    gamma: float = DEFAULT_GAMMA
    e: float = DEFAULT_LIOU_E
    gt_width: float = DEFAULT_GT_WIDTH
    reg_weight: float = 1.0
    cosine_decay: bool = True
    s: int = DEFAULT_S
    nms: NmsConfig = field(default_factory=NmsConfig)


def train_pld(
    dataset: list,
    ild_params: IldParams,
    basis: EigenlaneBasis,
    cfg: PldTrainConfig = PldTrainConfig(),
    params: PldParams = None,
    ablation: AblationFlags = AblationFlags(),
    log=None,
) -> tuple:
    """Train g, h and the motion head on 3-frame units; returns (params, trace).

    The detector weights stay frozen.  Each unit runs the first frame through
    the single-frame path (no loss) and the recursion through frames 2 and 3,
    summing their detection losses plus the motion loss; states keep their
    graph inside a unit so the third frame trains the second step's fusion.
    """
    if not dataset:
        raise EmptyDataset("train_pld needs at least one 3-frame unit")
    for frames, lanes_seq in dataset:
        if len(frames) != 3 or len(lanes_seq) != 3:
            raise ShapeError("each training unit must hold exactly 3 frames + GT")
    grid = basis.grid
    if params is None:
        params = PldParams.init(k=ild_params.k, s=cfg.s, seed=cfg.seed)
    ild_params.set_trainable(False)
    gts = [
        [make_gt_maps(lanes, basis, grid, cfg.gt_width) for lanes in lanes_seq]
        for _, lanes_seq in dataset
    ]
    opt = SGD(params.named(), cfg.lr, cfg.momentum)
    rng = np.random.default_rng(cfg.seed + 1)
    total = cfg.epochs * len(dataset)
    trace = []
    step = 0
    for epoch in range(cfg.epochs):
        for ui in rng.permutation(len(dataset)):
            if cfg.cosine_decay:
                opt.lr = cfg.lr * 0.5 * (1.0 + np.cos(np.pi * step / max(total, 1)))
            frames, _ = dataset[ui]
            _, _, state = ild_first_frame(frames[0], ild_params, basis, cfg.nms)
            loss = None
            for i in (1, 2):
                out = _pld_forward(
                    state, frames[i], ild_params, params, basis, cfg.nms, ablation
                )
                li = ild_loss(
                    out["p"], out["c"], gts[ui][i], basis,
                    cfg.alpha, cfg.gamma, cfg.e, cfg.reg_weight,
                )
                if not ablation.no_warp:
                    li = li + cfg.flow_weight * flow_loss(
                        Tensor(gts[ui][i - 1].pbar), Tensor(gts[ui][i].pbar), out["flow"]
                    )
                loss = li if loss is None else loss + li
                feats = out["xtilde"] if ablation.no_reuse else out["x"]
                state = FrameState(feats, out["mask"])
            opt.zero_grad()
            backward(loss)
            opt.step()
            trace.append(loss.item())
            step += 1
        if log:
            recent = trace[-len(dataset):]
            log(f"pld epoch {epoch}: mean loss {np.mean(recent):.4f}")
    return params, trace
