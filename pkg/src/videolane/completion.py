"""ALS matrix completion for lane matrices with missing samples.

Annotated lanes often have rows where the marking is occluded or off frame.
Stacking lanes as columns of a matrix A with an observed-entry mask, we fit
a rank-R factorization A ≈ UᵀV by ridge-regularized alternating least
squares and fill the missing entries from the factors.  Observed entries are
kept verbatim in the output by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IncompleteMatrix, ShapeError, SingularSystem
from .geometry import LanePolyline, SampleGrid

DEFAULT_RANK = 3
DEFAULT_LAM = 1e-3
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITERS = 500


@dataclass
class IncompleteLaneMatrix:
    """(n, n_lanes) values plus a boolean mask of which entries are observed."""

    values: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.observed = np.asarray(self.observed, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.observed.shape:
            raise ShapeError(
                f"values {self.values.shape} and observed {self.observed.shape} "
                "must be equal 2-D shapes"
            )
        empty = np.flatnonzero(~self.observed.any(axis=0))
        if empty.size:
            raise IncompleteMatrix(f"columns {empty.tolist()} have no observed entries")
        if not np.isfinite(self.values[self.observed]).all():
            raise IncompleteMatrix("observed entries must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def from_lanes(cls, lanes: list[LanePolyline]) -> "IncompleteLaneMatrix":
        values = np.stack([l.xs for l in lanes], axis=1)
        observed = np.stack([l.valid for l in lanes], axis=1)
        return cls(values, observed)


@dataclass
class Factorization:
    """Rank-R factors: A ≈ ufᵀ·vf with uf (rank, n) and vf (rank, n_lanes)."""

    uf: np.ndarray
    vf: np.ndarray
    lam: float

    def __post_init__(self):
        self.uf = np.asarray(self.uf, dtype=np.float64)
        self.vf = np.asarray(self.vf, dtype=np.float64)
        if self.uf.ndim != 2 or self.vf.ndim != 2 or self.uf.shape[0] != self.vf.shape[0]:
            raise ShapeError("factors must be 2-D with a shared leading rank")
        if self.uf.shape[0] < 1:
            raise ShapeError("rank must be >= 1")
        if self.lam < 0:
            raise ShapeError(f"lam must be >= 0, got {self.lam}")

    @property
    def rank(self) -> int:
        return self.uf.shape[0]

    def full(self) -> np.ndarray:
        return self.uf.T @ self.vf


def objective(m: IncompleteLaneMatrix, f: Factorization) -> float:
    """Masked squared residual plus ridge penalty on both factors."""
    n, n_lanes = m.shape
    if f.uf.shape[1] != n or f.vf.shape[1] != n_lanes:
        raise ShapeError(
            f"factor shapes {f.uf.shape}/{f.vf.shape} do not match matrix {m.shape}"
        )
    resid = (m.values - f.full())[m.observed]
    penalty = f.lam * (np.sum(f.uf**2) + np.sum(f.vf**2))
    return float(np.sum(resid**2) + penalty)


def _ridge_solve(gram: np.ndarray, rhs: np.ndarray, lam: float) -> np.ndarray:
    g = gram + lam * np.eye(gram.shape[0])
    try:
        return np.linalg.solve(g, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(
            "normal equations are singular; use lam > 0 or drop the row/column"
        ) from exc


def als_step(m: IncompleteLaneMatrix, f: Factorization, side: str) -> Factorization:
    """Exactly minimize the objective over one factor with the other fixed.

    side='rows' re-solves each column u_i of uf from the observed entries of
    matrix row i; side='cols' re-solves each column v_j of vf from matrix
    column j.  Each subproblem is an independent ridge regression.
    """
    n, n_lanes = m.shape
    if side == "rows":
        uf = np.empty_like(f.uf)
        for i in range(n):
            cols = np.flatnonzero(m.observed[i])
            basis = f.vf[:, cols]
            uf[:, i] = _ridge_solve(
                basis @ basis.T, basis @ m.values[i, cols], f.lam
            )
        return Factorization(uf, f.vf.copy(), f.lam)
    if side == "cols":
        vf = np.empty_like(f.vf)
        for j in range(n_lanes):
            rows = np.flatnonzero(m.observed[:, j])
            basis = f.uf[:, rows]
            vf[:, j] = _ridge_solve(
                basis @ basis.T, basis @ m.values[rows, j], f.lam
            )
        return Factorization(f.uf.copy(), vf, f.lam)
    raise ValueError(f"side must be 'rows' or 'cols', got {side!r}")


def als_complete(
    m: IncompleteLaneMatrix,
    rank: int = DEFAULT_RANK,
    lam: float = DEFAULT_LAM,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    keep_observed: bool = True,
) -> tuple[np.ndarray, Factorization, list[float]]:
    """Alternate exact half-steps until the objective stalls.

    Returns (completed matrix, final factorization, objective trace).  The
    trace starts at the initial objective and gains one entry per half-step;
    it is non-increasing throughout.  With keep_observed, observed entries
    are copied through and only missing ones come from the factors.
    """
    n, n_lanes = m.shape
    rng = np.random.default_rng(seed)
    f = Factorization(
        rng.uniform(-0.1, 0.1, size=(rank, n)),
        rng.uniform(-0.1, 0.1, size=(rank, n_lanes)),
        lam,
    )
    trace = [objective(m, f)]
    for _ in range(max_iters):
        before = trace[-1]
        f = als_step(m, f, "cols")
        trace.append(objective(m, f))
        f = als_step(m, f, "rows")
        trace.append(objective(m, f))
        if before - trace[-1] < tol * max(before, 1e-12):
            break
    completed = f.full()
    if keep_observed:
        completed = np.where(m.observed, m.values, completed)
    return completed, f, trace


def complete_lanes(
    lanes: list[LanePolyline],
    grid: SampleGrid,
    rank: int = DEFAULT_RANK,
    lam: float = DEFAULT_LAM,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
) -> list[LanePolyline]:
    """Fill the invalid samples of a lane group via ALS on one shared matrix.

    x values are scaled to [0, 1] by frame width before ALS so lam acts the
    same at any resolution, then scaled back.  Already-valid samples are
    returned untouched.
    """
    if not lanes:
        return []
    if all(l.valid.all() for l in lanes):
        return [l.copy() for l in lanes]
    raw = IncompleteLaneMatrix.from_lanes(lanes)
    m = IncompleteLaneMatrix(raw.values / grid.w, raw.observed)
    rank = min(rank, min(m.shape))
    completed, _, _ = als_complete(
        m, rank=rank, lam=lam, max_iters=max_iters, tol=tol, seed=seed
    )
    # scale back, then restore observed samples verbatim: x/w*w can lose
    # the last ulp and annotations must round-trip exactly
    completed = completed * grid.w
    completed[raw.observed] = raw.values[raw.observed]
    return [
        LanePolyline(completed[:, j], np.ones(grid.n, dtype=bool))
        for j in range(len(lanes))
    ]
