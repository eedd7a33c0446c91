"""Intra-frame lane detector.

A small conv encoder maps the image to K-channel features at 1/4 resolution.
From the features, f1 predicts a per-pixel lane probability P and f2 turns
[P, positional bias] into a per-pixel coefficient map C; decoding C at a
pixel through the lane basis yields the lane passing through that pixel.
Training drives P toward a rasterized GT mask (focal loss) and, at GT
foreground pixels, the decoded lane toward the owning GT lane (line-IoU).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    SGD,
    Tensor,
    as_tensor,
    backward,
    concat_channels,
    gather_pixels,
    matmul,
    maximum,
    minimum,
    sigmoid,
)
from .eigenlane import EigenlaneBasis
from .errors import EmptyDataset, IncompleteLane, ShapeError
from .geometry import LanePolyline, SampleGrid
from .nms import WORKING_STRIDE, curve_working_x
from .nn import apply_stack, he_conv, stack_params

DEFAULT_K = 32
DEFAULT_M = 4
DEFAULT_ALPHA = 0.25
DEFAULT_GAMMA = 2.0
DEFAULT_LIOU_E = 2.0  # working-grid pixels
DEFAULT_GT_WIDTH = 3.0  # working-grid pixels
LOG_EPS = 1e-12


@dataclass
class IldParams:
    """Encoder plus the two decoding heads; the positional bias is rebuilt
    from the map shape and carries no weights."""

    encoder: list
    f1: list
    f2: list
    k: int
    m: int

    @classmethod
    def init(cls, k: int = DEFAULT_K, m: int = DEFAULT_M, seed: int = 0) -> "IldParams":
        rng = np.random.default_rng(seed)
        encoder = [
            he_conv(rng, 16, 3, 3),
            he_conv(rng, 16, 16, 3),
            he_conv(rng, 32, 16, 3),
            he_conv(rng, 32, 32, 3),
            he_conv(rng, k, 32, 3),
            he_conv(rng, k, k, 3),
        ]
        f1 = [he_conv(rng, 16, k, 3), he_conv(rng, 1, 16, 3)]
        # start the probability map near zero: lanes are sparse
        f1[-1][1].data[:] = -2.0
        f2 = [he_conv(rng, 24, 5, 5), he_conv(rng, m, 24, 5)]
        return cls(encoder, f1, f2, k, m)

    def named(self) -> dict:
        return {
            **stack_params("enc", self.encoder),
            **stack_params("f1", self.f1),
            **stack_params("f2", self.f2),
        }

    def set_trainable(self, flag: bool):
        for t in self.named().values():
            t.requires_grad = flag


def positional_bias(wh: int, ww: int) -> Tensor:
    """Fixed 4-channel map: normalized x, normalized y and their sinusoids."""
    x = np.linspace(0.0, 1.0, ww)
    y = np.linspace(0.0, 1.0, wh)
    xx, yy = np.meshgrid(x, y)
    return Tensor(np.stack([xx, yy, np.sin(2 * np.pi * xx), np.sin(2 * np.pi * yy)]))


def encode_features(image, params: IldParams) -> Tensor:
    """(3, H0, W0) image in [0,1] -> (K, H0/4, W0/4) features."""
    image = as_tensor(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"expected a (3, H, W) image, got {image.shape}")
    if image.shape[1] % WORKING_STRIDE or image.shape[2] % WORKING_STRIDE:
        raise ShapeError(
            f"image dims must be multiples of {WORKING_STRIDE}, got {image.shape}"
        )
    return apply_stack(image, params.encoder, strides=[1, 2, 1, 2, 1, 1])


def decode_maps(x: Tensor, params: IldParams) -> tuple:
    """Features -> (P, C): P = sigmoid(f1(X)), C = f2([P, positional bias])."""
    if x.ndim != 3 or x.shape[0] != params.k:
        raise ShapeError(f"expected ({params.k}, H, W) features, got {x.shape}")
    p = sigmoid(apply_stack(x, params.f1))
    c = apply_stack(concat_channels(p, positional_bias(*x.shape[1:])), params.f2)
    return p, c


# -- ground-truth maps ----------------------------------------------------


@dataclass
class GtMaps:
    """Rasterized targets on the working grid.

    pbar: (1, H, W) binary lane raster; cbar: (M, H, W) coefficients of the
    owning lane at foreground pixels, zero elsewhere; fg: (H, W) bool mask;
    owner: (H, W) index into lanes_norm, -1 at background; lanes_norm:
    (n_lanes, n) GT lanes in basis units (pixels / x_scale).
    """

    pbar: np.ndarray
    cbar: np.ndarray
    fg: np.ndarray
    owner: np.ndarray
    lanes_norm: np.ndarray


def make_gt_maps(
    gt_lanes: list,
    basis: EigenlaneBasis,
    grid: SampleGrid,
    gt_width: float = DEFAULT_GT_WIDTH,
) -> GtMaps:
    """Rasterize GT lanes at width gt_width; overlaps go to the nearer lane."""
    wh, ww = grid.h // WORKING_STRIDE, grid.w // WORKING_STRIDE
    dist = np.full((max(len(gt_lanes), 1), wh, ww), np.inf)
    lanes_norm = np.zeros((len(gt_lanes), grid.n))
    cols = np.arange(ww, dtype=np.float64)
    for li, lane in enumerate(gt_lanes):
        if not lane.valid.all():
            raise IncompleteLane("GT lanes must be complete; run completion first")
        lanes_norm[li] = lane.xs / basis.x_scale
        xw = curve_working_x(lane, grid, wh)
        for i in range(wh):
            if not np.isnan(xw[i]):
                dist[li, i] = np.abs(cols - xw[i])
    fg = (dist <= gt_width / 2.0).any(axis=0)
    owner = np.where(fg, dist.argmin(axis=0), -1)
    cbar = np.zeros((basis.m, wh, ww))
    if gt_lanes:
        coeffs = lanes_norm @ basis.u  # (n_lanes, m)
        rows, colids = np.nonzero(fg)
        cbar[:, rows, colids] = coeffs[owner[rows, colids]].T
    return GtMaps(
        pbar=fg[None].astype(np.float64),
        cbar=cbar,
        fg=fg,
        owner=owner,
        lanes_norm=lanes_norm,
    )


# -- losses ---------------------------------------------------------------


def focal_loss(p, gt: GtMaps, alpha: float = DEFAULT_ALPHA, gamma: float = DEFAULT_GAMMA) -> Tensor:
    """Mean over pixels of -alpha * (1 - p_t)^gamma * log(p_t)."""
    p = as_tensor(p)
    if p.shape != gt.pbar.shape:
        raise ShapeError(f"P {p.shape} does not match GT {gt.pbar.shape}")
    mask = Tensor(gt.pbar)
    p_t = mask * p + (1.0 - mask) * (1.0 - p)
    terms = -alpha * (1.0 - p_t) ** gamma * (p_t + LOG_EPS).log()
    return terms.mean()


def _liou_terms(r, rbar, e: float):
    hi = maximum(r, rbar)
    lo = minimum(r, rbar)
    inter = (lo + e) - (hi - e)  # signed: negative once the gap exceeds 2e
    union = (hi + e) - (lo - e)
    return inter, union


def liou_loss(r, rbar, e: float) -> Tensor:
    """Line-IoU loss between two lanes sampled on the same rows.

    Each row contributes segments [r-e, r+e] vs [rbar-e, rbar+e]; the loss is
    1 - sum(inter)/sum(union) with a signed intersection, so it lives in
    [0, 2].  e shares the units of the inputs.
    """
    if e <= 0:
        raise ShapeError(f"e must be positive, got {e}")
    vals = []
    for lane in (r, rbar):
        if isinstance(lane, LanePolyline):
            if not lane.valid.all():
                raise IncompleteLane("line-IoU needs fully valid lanes")
            vals.append(as_tensor(lane.xs))
        else:
            vals.append(as_tensor(lane))
    rt, bt = vals
    if rt.shape != bt.shape:
        raise ShapeError(f"lane shapes differ: {rt.shape} vs {bt.shape}")
    inter, union = _liou_terms(rt, bt, e)
    return 1.0 - inter.sum() / union.sum()


def ild_loss(
    p,
    c,
    gt: GtMaps,
    basis: EigenlaneBasis,
    alpha: float = DEFAULT_ALPHA,
    gamma: float = DEFAULT_GAMMA,
    e: float = DEFAULT_LIOU_E,
    reg_weight: float = 1.0,
) -> Tensor:
    """Classification plus regression: focal everywhere, line-IoU at GT pixels.

    At each foreground pixel the coefficient vector decodes (through the
    basis) to a lane that is compared against the owning GT lane.  e is
    given in working-grid pixels and converted to basis units.
    """
    c = as_tensor(c)
    if c.shape[0] != basis.m or c.shape[1:] != gt.fg.shape:
        raise ShapeError(f"C {c.shape} does not match basis m={basis.m} / GT {gt.fg.shape}")
    loss = focal_loss(p, gt, alpha, gamma)
    rows, cols = np.nonzero(gt.fg)
    if rows.size:
        coeffs = gather_pixels(c, rows, cols)  # (m, P)
        pred = matmul(Tensor(basis.u), coeffs)  # (n, P) in basis units
        target = Tensor(gt.lanes_norm[gt.owner[rows, cols]].T)
        e_units = e * WORKING_STRIDE / basis.x_scale
        inter, union = _liou_terms(pred, target, e_units)
        per_pixel = 1.0 - (inter.sum(axis=0) / union.sum(axis=0))
        loss = loss + reg_weight * per_pixel.mean()
    return loss


# -- training -------------------------------------------------------------


@dataclass
class IldTrainConfig:
    epochs: int = 2
    lr: float = 1e-2
    momentum: float = 0.9
    seed: int = 0
    alpha: float = DEFAULT_ALPHA
    gamma: float = DEFAULT_GAMMA
    e: float = DEFAULT_LIOU_E
    gt_width: float = DEFAULT_GT_WIDTH
    reg_weight: float = 1.0
    cosine_decay: bool = True


def ild_forward(image, params: IldParams):
    x = encode_features(image, params)
    p, c = decode_maps(x, params)
    return x, p, c


def train_ild(
    dataset: list,
    basis: EigenlaneBasis,
    grid: SampleGrid,
    cfg: IldTrainConfig = IldTrainConfig(),
    params: IldParams = None,
    log=None,
) -> tuple:
    """Train on (image, gt_lanes) pairs; returns (params, loss trace).

    One optimizer step per sample, samples shuffled each epoch with a seeded
    permutation, cosine-decayed learning rate.  Deterministic for a fixed
    seed and dataset order.
    """
    if not dataset:
        raise EmptyDataset("train_ild needs at least one sample")
    if params is None:
        params = IldParams.init(seed=cfg.seed)
    gts = [make_gt_maps(lanes, basis, grid, cfg.gt_width) for _, lanes in dataset]
    opt = SGD(params.named(), cfg.lr, cfg.momentum)
    rng = np.random.default_rng(cfg.seed + 1)
    total = cfg.epochs * len(dataset)
    trace = []
    step = 0
    for epoch in range(cfg.epochs):
        for si in rng.permutation(len(dataset)):
            if cfg.cosine_decay:
                opt.lr = cfg.lr * 0.5 * (1.0 + np.cos(np.pi * step / max(total, 1)))
            _, p, c = ild_forward(Tensor(dataset[si][0]), params)
            loss = ild_loss(
                p, c, gts[si], basis, cfg.alpha, cfg.gamma, cfg.e, cfg.reg_weight
            )
            opt.zero_grad()
            backward(loss)
            opt.step()
            trace.append(loss.item())
            step += 1
        if log:
            recent = trace[-len(dataset):]
            log(f"ild epoch {epoch}: mean loss {np.mean(recent):.4f}")
    return params, trace
