import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from videolane.eigenlane import build_basis, decode, encode
from videolane.errors import ConfigError, ShapeError
from videolane.geometry import LanePolyline, SampleGrid
from videolane.nms import (
    Detection,
    NmsConfig,
    curve_working_x,
    full_to_working,
    lane_mask,
    nms,
    working_to_full,
)

GRID = SampleGrid(n=16, y_top=20.0, y_bottom=63.0, h=64, w=128)
WH, WW = 16, 32


def lane_family_basis(m=4, seed=0, n_lanes=40):
    """Basis fit to quasi-parallel quadratics in raw pixel units."""
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, GRID.n)
    cols = []
    for _ in range(n_lanes):
        a = rng.uniform(5, GRID.w - 5)
        b = rng.uniform(-25, 25)
        c = rng.uniform(-10, 10)
        cols.append(a + b * t + c * t**2)
    return build_basis(np.stack(cols, axis=1), m, GRID)


def naive_nms(p, c, basis, cfg):
    """Re-scanning reference: plain loops, explicit suppressed set.

    Shares decode and np.interp with production (same geometry primitives);
    the iteration, tie-breaking and suppression bookkeeping are independent.
    """
    wh, ww = p.shape
    rows = basis.grid.rows()
    suppressed = set()
    dets = []
    while len(dets) < cfg.max_lanes:
        best = None
        for i in range(wh):
            for j in range(ww):
                if (i, j) in suppressed:
                    continue
                if best is None or p[i, j] > p[best]:
                    best = (i, j)
        if best is None or p[best] <= cfg.prob_threshold:
            break
        coeff = c[:, best[0], best[1]].copy()
        xs_px = (basis.u @ coeff) * basis.x_scale
        for wi in range(wh):
            y = wi * 4.0 + 1.5
            if not (rows[0] - 1e-9 <= y <= rows[-1] + 1e-9):
                continue
            x = float(np.interp(y, rows, xs_px))
            if not (0.0 <= x <= basis.grid.w - 1.0):
                continue
            xw = (x - 1.5) / 4.0
            for wj in range(ww):
                if abs(wj - xw) <= cfg.removal_halfwidth:
                    suppressed.add((wi, wj))
        suppressed.add(best)
        dets.append((best, float(p[best]), coeff, xs_px))
    return dets


def random_maps(basis, seed, wh=WH, ww=WW):
    rng = np.random.default_rng(seed)
    p = rng.random((wh, ww))
    c = rng.uniform(-60, 60, size=(basis.m, wh, ww))
    # recentre the constant coefficient so many decoded curves cross the frame
    mean_lane = np.full(basis.grid.n, basis.grid.w / 2.0)
    c[0] += basis.u[:, 0] @ mean_lane
    return p, c


class TestCoordinateMaps:
    def test_round_trip(self):
        idx = np.arange(16)
        assert np.allclose(full_to_working(working_to_full(idx)), idx)

    def test_centers(self):
        assert working_to_full(0) == 1.5
        assert working_to_full(3) == 13.5


class TestNmsConfig:
    def test_defaults(self):
        cfg = NmsConfig()
        assert cfg.prob_threshold == 0.5
        assert cfg.removal_halfwidth == 4.0
        assert cfg.mask_halfwidth == 2.0
        assert cfg.max_lanes == 6

    @pytest.mark.parametrize(
        "kw",
        [
            {"prob_threshold": 0.0},
            {"prob_threshold": 1.0},
            {"removal_halfwidth": 0.5},
            {"mask_halfwidth": 0.0},
            {"max_lanes": 0},
        ],
    )
    def test_rejects_bad_values(self, kw):
        with pytest.raises(ConfigError):
            NmsConfig(**kw)


class TestNms:
    def setup_method(self):
        self.basis = lane_family_basis()
        self.cfg = NmsConfig()

    def put_lane_peak(self, p, c, lane_xs, score):
        """Seed a peak on the curve and fill its coefficients there."""
        coeff = encode(LanePolyline.full(lane_xs), self.basis)
        xw = curve_working_x(LanePolyline.full(lane_xs), GRID, WH)
        row = next(i for i in range(WH) if not np.isnan(xw[i]))
        col = int(round(xw[row]))
        p[row, col] = score
        c[:, row, col] = coeff
        return (row, col), coeff

    def test_all_below_threshold_is_empty(self):
        p = np.full((WH, WW), 0.4)
        c = np.zeros((4, WH, WW))
        assert nms(p, c, self.basis, self.cfg) == []

    def test_peak_exactly_at_threshold_not_selected(self):
        p = np.zeros((WH, WW))
        p[4, 7] = 0.5
        assert nms(p, np.zeros((4, WH, WW)), self.basis, self.cfg) == []

    def test_single_peak_decodes_its_coefficients(self):
        p = np.full((WH, WW), 0.1)
        c = np.zeros((4, WH, WW))
        lane_xs = np.linspace(50, 70, GRID.n)
        seed, coeff = self.put_lane_peak(p, c, lane_xs, 0.9)
        dets = nms(p, c, self.basis, self.cfg)
        assert len(dets) == 1
        d = dets[0]
        assert d.seed_pixel == seed
        assert d.score == pytest.approx(0.9)
        assert np.allclose(d.coeff, coeff)
        assert np.allclose(d.lane.xs, decode(coeff, self.basis).xs)
        assert np.allclose(d.lane.xs, lane_xs, atol=1e-6)

    def test_second_peak_on_same_curve_suppressed(self):
        p = np.full((WH, WW), 0.1)
        c = np.zeros((4, WH, WW))
        lane_xs = np.linspace(60, 75, GRID.n)
        coeff = encode(LanePolyline.full(lane_xs), self.basis)
        xw = curve_working_x(LanePolyline.full(lane_xs), GRID, WH)
        rows = [i for i in range(WH) if not np.isnan(xw[i])]
        r1, r2 = rows[0], rows[3]
        p[r1, int(round(xw[r1]))] = 0.9
        c[:, r1, int(round(xw[r1]))] = coeff
        p[r2, int(round(xw[r2])) + 2] = 0.8  # within removal_halfwidth=4
        c[:, r2, int(round(xw[r2])) + 2] = coeff
        dets = nms(p, c, self.basis, self.cfg)
        assert len(dets) == 1
        assert dets[0].score == pytest.approx(0.9)

    def test_two_distant_lanes_both_kept(self):
        p = np.full((WH, WW), 0.1)
        c = np.zeros((4, WH, WW))
        self.put_lane_peak(p, c, np.linspace(25, 30, GRID.n), 0.9)
        self.put_lane_peak(p, c, np.linspace(95, 100, GRID.n), 0.8)
        dets = nms(p, c, self.basis, self.cfg)
        assert len(dets) == 2
        assert dets[0].score >= dets[1].score

    def test_max_lanes_cap(self):
        basis = lane_family_basis()
        p, c = random_maps(basis, seed=5)
        p[:] = 0.99  # everything is a candidate
        cfg = NmsConfig(max_lanes=3)
        assert len(nms(p, c, basis, cfg)) == 3

    def test_lexicographic_tie_break(self):
        p = np.full((WH, WW), 0.1)
        c = np.zeros((4, WH, WW))
        _, coeff_a = self.put_lane_peak(p, c, np.linspace(25, 30, GRID.n), 0.9)
        seed_b, _ = self.put_lane_peak(p, c, np.linspace(95, 100, GRID.n), 0.9)
        dets = nms(p, c, self.basis, self.cfg)
        # equal scores: the row-major earlier pixel must come out first
        assert len(dets) == 2
        assert dets[0].seed_pixel < dets[1].seed_pixel

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            nms(np.zeros((4, 4)), np.zeros((4, 5, 5)), self.basis, self.cfg)
        with pytest.raises(ShapeError):
            nms(np.zeros((3, 4, 4)), np.zeros((4, 4, 4)), self.basis, self.cfg)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_matches_naive_reference(self, seed):
        basis = lane_family_basis()
        p, c = random_maps(basis, seed)
        got = nms(p, c, basis, NmsConfig())
        want = naive_nms(p, c, basis, NmsConfig())
        assert len(got) == len(want)
        for d, (seed_px, score, coeff, xs_px) in zip(got, want):
            assert d.seed_pixel == seed_px
            assert d.score == score
            assert np.array_equal(d.coeff, coeff)
            assert np.array_equal(d.lane.xs, xs_px)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_selection_invariants(self, seed):
        basis = lane_family_basis()
        p, c = random_maps(basis, seed)
        dets = nms(p, c, basis, NmsConfig())
        scores = [d.score for d in dets]
        assert scores == sorted(scores, reverse=True)
        assert all(s > 0.5 for s in scores)
        # each later seed lies farther than removal_halfwidth from every
        # earlier curve at its own row (otherwise it would be suppressed)
        for a in range(len(dets)):
            xw = curve_working_x(dets[a].lane, basis.grid, WH)
            for b in range(a + 1, len(dets)):
                row, col = dets[b].seed_pixel
                if not np.isnan(xw[row]):
                    assert abs(col - xw[row]) > NmsConfig().removal_halfwidth

    def test_x_scale_multiplies_decoded_lane(self):
        # normalized basis: same geometry, coefficients in width units
        rng = np.random.default_rng(3)
        t = np.linspace(0, 1, GRID.n)
        cols = [
            (rng.uniform(5, GRID.w - 5) + rng.uniform(-25, 25) * t) / GRID.w
            for _ in range(30)
        ]
        basis = build_basis(np.stack(cols, axis=1), 4, GRID, x_scale=float(GRID.w))
        lane_xs = np.linspace(40, 55, GRID.n)
        coeff = basis.u.T @ (lane_xs / GRID.w)
        p = np.full((WH, WW), 0.1)
        c = np.zeros((4, WH, WW))
        p[8, 11] = 0.9
        c[:, 8, 11] = coeff
        dets = nms(p, c, basis, NmsConfig())
        assert len(dets) == 1
        assert np.allclose(dets[0].lane.xs, lane_xs, atol=1e-6)


class TestLaneMask:
    def test_empty_detections(self):
        mask = lane_mask([], GRID, 2.0)
        assert mask.shape == (1, WH, WW)
        assert mask.sum() == 0

    def test_single_vertical_lane_band(self):
        lane = LanePolyline.full(np.full(GRID.n, 61.5))  # working col 15
        det = Detection(lane, 0.9, np.zeros(4), (8, 15))
        mask = lane_mask([det], GRID, 2.0)[0]
        on_rows = [i for i in range(WH) if mask[i].any()]
        for i in on_rows:
            assert np.array_equal(np.flatnonzero(mask[i]), [13, 14, 15, 16, 17])
        # rows above the grid's vertical extent stay empty
        assert not mask[: int(np.ceil((GRID.y_top - 1.5) / 4))].any()

    def test_or_of_per_lane_masks(self):
        basis = lane_family_basis(seed=9)
        p, c = random_maps(basis, seed=11)
        dets = nms(p, c, basis, NmsConfig())
        union = lane_mask(dets, GRID, 2.0)
        singles = [lane_mask([d], GRID, 2.0) for d in dets]
        want = np.zeros_like(union, dtype=bool)
        for s in singles:
            want |= s.astype(bool)
        assert np.array_equal(union.astype(bool), want)

    def test_binary_values(self):
        basis = lane_family_basis(seed=13)
        p, c = random_maps(basis, seed=17)
        mask = lane_mask(nms(p, c, basis, NmsConfig()), GRID, 2.0)
        assert set(np.unique(mask)) <= {0.0, 1.0}
