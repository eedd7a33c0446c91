"""Low-rank lane representation.

Real lanes are highly correlated, so a small orthonormal basis (the first M
left singular vectors of a lane matrix whose columns are training lanes)
captures them well.  Lanes are encoded as M coefficients c = Uᵀr and decoded
as r = U·c; detection heads then regress c instead of full polylines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IncompleteLane, IncompleteMatrix, InvalidDimension
from .geometry import LanePolyline, SampleGrid


@dataclass(frozen=True)
class EigenlaneBasis:
    """Orthonormal lane basis.

    u: (n, m) with orthonormal columns; singular_values: (m,) non-increasing;
    grid: vertical sampling layout of the rows of u; x_scale: the factor lane
    x coordinates were divided by before the basis was built (1.0 for raw
    pixel bases, frame width for normalized ones).  Decoded lanes must be
    multiplied back by x_scale to get pixels.
    """

    u: np.ndarray
    singular_values: np.ndarray
    grid: SampleGrid
    x_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=np.float64))
        object.__setattr__(
            self, "singular_values", np.asarray(self.singular_values, dtype=np.float64)
        )
        n, m = self.u.shape
        if n != self.grid.n:
            raise InvalidDimension(f"basis has {n} rows but grid has {self.grid.n}")
        if self.singular_values.shape != (m,):
            raise InvalidDimension("need one singular value per basis column")
        gram = self.u.T @ self.u
        if not np.allclose(gram, np.eye(m), atol=1e-9):
            raise InvalidDimension("basis columns are not orthonormal")
        if np.any(np.diff(self.singular_values) > 1e-12):
            raise InvalidDimension("singular values must be non-increasing")

    @property
    def m(self) -> int:
        return self.u.shape[1]


def build_basis(lanes: np.ndarray, m: int, grid: SampleGrid, x_scale: float = 1.0) -> EigenlaneBasis:
    """Fit an m-dimensional basis to a complete (n, n_lanes) lane matrix.

    Columns are lanes.  U holds the first m left singular vectors, so
    U·Uᵀ·A is the best rank-m approximation of A in Frobenius norm.
    """
    a = np.asarray(lanes, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidDimension(f"lane matrix must be 2-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise IncompleteMatrix("lane matrix has missing entries, complete it first")
    n, n_lanes = a.shape
    if not (1 <= m <= min(n, n_lanes)):
        raise InvalidDimension(f"need 1 <= m <= min(n, n_lanes)={min(n, n_lanes)}, got {m}")
    u_full, s_full, _ = np.linalg.svd(a, full_matrices=False)
    return EigenlaneBasis(u_full[:, :m], s_full[:m], grid, x_scale)


def encode(lane: LanePolyline, basis: EigenlaneBasis) -> np.ndarray:
    """Project a fully valid lane onto the basis: c = Uᵀ·xs."""
    if lane.xs.shape[0] != basis.grid.n:
        raise InvalidDimension(
            f"lane has {lane.xs.shape[0]} points, basis expects {basis.grid.n}"
        )
    if not lane.valid.all():
        raise IncompleteLane("encode needs a fully valid lane, complete it first")
    return basis.u.T @ lane.xs


def decode(c: np.ndarray, basis: EigenlaneBasis) -> LanePolyline:
    """Reconstruct a lane from coefficients: xs = U·c, all points valid."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (basis.m,):
        raise InvalidDimension(f"expected {basis.m} coefficients, got shape {c.shape}")
    return LanePolyline.full(basis.u @ c)


def reconstruction_error(lanes: np.ndarray, basis: EigenlaneBasis) -> float:
    """Mean per-point absolute reconstruction error over the matrix columns."""
    a = np.asarray(lanes, dtype=np.float64)
    recon = basis.u @ (basis.u.T @ a)
    return float(np.mean(np.abs(recon - a)))
