"""Tests for the two-dimensional variational-inequality solver."""

import io

import numpy as np
import pytest

from switchstop import hjb, onedim
from switchstop.model import CostSpec, ModelSpec, eval_cost
from conftest import detection_model


def concavity_violation(w, g, axis, margin):
    """Worst positive chord defect along one axis, margin nodes off the edges."""
    ww = w if axis == 0 else w.T
    other = slice(margin, ww.shape[1] - 1)
    worst = 0.0
    for i in range(margin, len(g) - 1):
        lam = (g[i] - g[i - 1]) / (g[i + 1] - g[i - 1])
        chord = (1 - lam) * ww[i - 1] + lam * ww[i + 1]
        worst = max(worst, float((ww[i] - chord)[other].max()))
    return worst


def local_cell(nodes, x):
    j = int(np.clip(np.searchsorted(nodes, x), 1, nodes.size - 1))
    return nodes[j] - nodes[j - 1]


@pytest.fixture(scope="module")
def setup(acceptance_model):
    m = acceptance_model
    ax1 = onedim.solve_axis_problem(m, 1)
    ax2 = onedim.solve_axis_problem(m, 2)
    grid = hjb.make_grid(ax1, ax2)
    field = hjb.solve_vi(m, grid, ax1, ax2, n_cut=ax1.cutoff_n)
    return m, ax1, ax2, grid, field


class TestGrid2D:
    def test_too_few_nodes(self):
        with pytest.raises(ValueError, match="16"):
            hjb.Grid2D(np.geomspace(0.1, 1, 8), np.geomspace(0.1, 1, 16))

    def test_unsorted(self):
        bad = np.geomspace(0.1, 1, 16)[::-1].copy()
        with pytest.raises(ValueError, match="increasing"):
            hjb.Grid2D(bad, np.geomspace(0.1, 1, 16))

    def test_nonpositive(self):
        bad = np.linspace(0.0, 1.0, 16)
        with pytest.raises(ValueError, match="positive"):
            hjb.Grid2D(bad, np.geomspace(0.1, 1, 16))

    def test_make_grid_span(self, setup):
        _, ax1, ax2, grid, _ = setup
        top = max(ax1.thresholds.max(), ax2.thresholds.max())
        assert grid.nodes1[-1] == pytest.approx(2.0 * top)
        assert grid.nodes2[-1] == pytest.approx(2.0 * top)
        assert grid.nodes1[0] == 1e-3

    def test_make_grid_axis_order(self, setup):
        _, ax1, ax2, _, _ = setup
        with pytest.raises(ValueError, match="order"):
            hjb.make_grid(ax2, ax1)


class TestSolveBasics:
    def test_instant_stopping_when_cost_nonnegative(self, acceptance_model):
        m = acceptance_model
        m0 = ModelSpec(q=m.q, a=m.a, b=m.b, sigma=m.sigma, lam=m.lam,
                       cost=CostSpec("affine", [0.5, 0.5], [0.5, 0.5],
                                     [0.0, 0.0]))
        a1 = onedim.solve_axis_problem(m0, 1, grid=(1e-3, 1.0, 33))
        a2 = onedim.solve_axis_problem(m0, 2, grid=(1e-3, 1.0, 33))
        grid = hjb.Grid2D(np.geomspace(1e-3, 1.0, 16),
                          np.geomspace(1e-3, 1.0, 16))
        field = hjb.solve_vi(m0, grid, a1, a2)
        assert np.abs(field.w).max() == 0.0
        assert field.sweeps <= 1
        b = hjb.extract_boundary(field)
        assert np.abs(b.values).max() == 0.0
        assert hjb.smooth_fit_gap(field, b, 0) == 0.0

    def test_far_edge_guard(self, setup):
        m, ax1, ax2, _, _ = setup
        # H(1.5, 1.5) = -0.5 < 0: box ends inside the continuation region
        small = hjb.Grid2D(np.geomspace(1e-3, 1.5, 16),
                           np.geomspace(1e-3, 1.5, 16))
        with pytest.raises(onedim.SolverError, match="enlarge"):
            hjb.solve_vi(m, small, ax1, ax2)

    def test_bad_cutoff(self, setup):
        m, ax1, ax2, grid, _ = setup
        with pytest.raises(ValueError, match="cutoff"):
            hjb.solve_vi(m, grid, ax1, ax2, n_cut=0.0)

    def test_axis_order(self, setup):
        m, ax1, ax2, grid, _ = setup
        with pytest.raises(ValueError, match="order"):
            hjb.solve_vi(m, grid, ax2, ax1)

    def test_warm_start_shape(self, setup):
        m, ax1, ax2, grid, _ = setup
        with pytest.raises(ValueError, match="warm start"):
            hjb.solve_vi(m, grid, ax1, ax2, w0=np.zeros((2, 5, 5)))


class TestFieldInvariants:
    def test_nonpositive(self, setup):
        assert setup[4].w.max() <= 0.0

    def test_residual_at_tolerance(self, setup):
        assert setup[4].residual <= hjb.RESIDUAL_TOL

    def test_dirichlet_edges(self, setup):
        _, ax1, ax2, grid, field = setup
        for r in range(field.n_regimes):
            np.testing.assert_array_equal(
                field.w[r, :, 0], onedim.axis_dirichlet_data(ax1, r)(grid.nodes1))
            np.testing.assert_array_equal(
                field.w[r, 0, 1:], onedim.axis_dirichlet_data(ax2, r)(grid.nodes2)[1:])
        assert np.abs(field.w[:, -1, :]).max() == 0.0
        assert np.abs(field.w[:, :, -1]).max() == 0.0

    def test_monotone_in_each_coordinate(self, setup):
        field = setup[4]
        for r in range(field.n_regimes):
            assert np.diff(field.w[r], axis=0).min() >= -1e-9
            assert np.diff(field.w[r], axis=1).min() >= -1e-9

    def test_discrete_concavity(self, setup):
        # the chord defect peaks at the free-boundary kink, where it scales
        # like |d22 w| h^2; rows touching the min edges are skipped because
        # the prescribed one-dimensional edge data is only the x -> 0 limit
        # and leaves an O(1) seam defect in the first interior row
        _, _, _, grid, field = setup
        for r in range(field.n_regimes):
            for axis, g in ((0, grid.nodes1), (1, grid.nodes2)):
                assert concavity_violation(field.w[r], g, axis, 2) <= 0.02

    def test_independent_stencil_recheck(self, setup):
        m, ax1, _, grid, field = setup
        g1, g2 = grid.nodes1, grid.nodes2
        rng = np.random.default_rng(11)
        checked = 0
        while checked < 10:
            r = int(rng.integers(0, m.n_regimes))
            i = int(rng.integers(1, g1.size - 1))
            j = int(rng.integers(1, g2.size - 1))
            if field.w[r, i, j] >= -1e-6:
                continue
            x1, x2 = g1[i], g2[j]
            h1m, h1p = g1[i] - g1[i - 1], g1[i + 1] - g1[i]
            h2m, h2p = g2[j] - g2[j - 1], g2[j + 1] - g2[j]
            mu1 = m.a[r, 0] + m.b[r, 0, 0] * x1 + m.b[r, 0, 1] * x2
            mu2 = m.a[r, 1] + m.b[r, 1, 0] * x1 + m.b[r, 1, 1] * x2
            d1 = 0.5 * (m.sigma[r, 0] * x1) ** 2
            d2 = 0.5 * (m.sigma[r, 1] * x2) ** 2

            def one_axis(mu, d, hm, hp):
                span = hm + hp
                cl = 2 * d / (hm * span) - mu * hp / (hm * span)
                ch = 2 * d / (hp * span) + mu * hm / (hp * span)
                if cl < 0 or ch < 0:
                    cl = 2 * d / (hm * span) + max(-mu, 0.0) / hm
                    ch = 2 * d / (hp * span) + max(mu, 0.0) / hp
                return cl, ch

            cw, ce = one_axis(mu1, d1, h1m, h1p)
            cs, cn = one_axis(mu2, d2, h2m, h2p)
            h = min(float(eval_cost(m, r, np.array([x1, x2]))), field.cutoff_n)
            lhs = ((-(ce + cw + cn + cs) + m.q.rates[r, r] - m.lam[r])
                   * field.w[r, i, j]
                   + ce * field.w[r, i + 1, j] + cw * field.w[r, i - 1, j]
                   + cn * field.w[r, i, j + 1] + cs * field.w[r, i, j - 1]
                   + h)
            for s in range(m.n_regimes):
                if s != r:
                    lhs += m.q.rates[r, s] * field.w[s, i, j]
            assert abs(lhs) <= 10 * hjb.RESIDUAL_TOL
            checked += 1

    def test_uncut_equals_slack_cutoff(self, setup):
        # max H on the box is ~16, so any cutoff above that changes nothing
        m, ax1, ax2, grid, field = setup
        free = hjb.solve_vi(m, grid, ax1, ax2, n_cut=np.inf)
        np.testing.assert_array_equal(free.w, field.w)


class TestCutoffMonotonicity:
    def test_field_nondecreasing_in_cutoff(self, setup):
        # fixed edge data isolates the interior cutoff: H^1 <= H^2 pointwise
        # with the same edges, so the monotone scheme orders the solutions
        m, ax1, ax2, grid, _ = setup
        w1 = hjb.solve_vi(m, grid, ax1, ax2, n_cut=1.0).w
        w2 = hjb.solve_vi(m, grid, ax1, ax2, n_cut=2.0).w
        assert (w2 - w1).min() >= -1e-9
        assert (w2 - w1).max() > 1e-3

    def test_slack_cutoffs_agree(self, setup):
        # the curve tops out around H ~ 2.5, so 10 and 100 both sit above
        # every binding level and give the same field
        m, ax1, ax2, grid, _ = setup
        w10 = hjb.solve_vi(m, grid, ax1, ax2, n_cut=10.0).w
        w100 = hjb.solve_vi(m, grid, ax1, ax2, n_cut=100.0).w
        assert np.abs(w10 - w100).max() <= 1e-9


class TestBoundary:
    def test_nonincreasing(self, setup):
        b = hjb.extract_boundary(setup[4])
        for r in range(b.n_regimes):
            assert np.diff(b.values[r]).max() <= 1e-12

    def test_zero_beyond_axis_threshold(self, setup):
        _, ax1, _, grid, field = setup
        b = hjb.extract_boundary(field)
        for r in range(b.n_regimes):
            thr = ax1.thresholds[r]
            cell = local_cell(grid.nodes1, thr)
            zero = b.values[r] == 0.0
            assert zero.any()
            first = b.x1[int(np.argmax(zero))]
            assert abs(first - thr) <= cell
            assert np.all(b.values[r][b.x1 >= first] == 0.0)

    def test_admissible_on_curve(self, setup):
        # node-snapping can read one cell above the axis-2 ceiling
        m, _, ax2, grid, field = setup
        b = hjb.extract_boundary(field)
        top = ax2.thresholds.max()
        for r in range(b.n_regimes):
            pos = b.values[r] > 0
            pts = np.stack([b.x1[pos], b.values[r][pos]], axis=-1)
            assert eval_cost(m, r, pts).min() >= -1e-6
            assert b.values[r].max() <= top + local_cell(grid.nodes2, top) + 1e-9

    def test_discretely_convex_within_one_cell(self, setup):
        _, _, _, grid, field = setup
        b = hjb.extract_boundary(field)
        for r in range(b.n_regimes):
            v = b.values[r]
            for i in range(1, v.size - 1):
                lam = (b.x1[i] - b.x1[i - 1]) / (b.x1[i + 1] - b.x1[i - 1])
                chord = (1 - lam) * v[i - 1] + lam * v[i + 1]
                cell = local_cell(grid.nodes2, max(v[i], grid.nodes2[1]))
                assert v[i] - chord <= cell

    def test_interpolation_rule(self, setup):
        _, _, _, grid, field = setup
        b = hjb.extract_boundary(field)
        mid = 0.5 * (b.x1[3] + b.x1[4])
        lam = (mid - b.x1[3]) / (b.x1[4] - b.x1[3])
        want = (1 - lam) * b.values[1, 3] + lam * b.values[1, 4]
        assert b(1, mid) == pytest.approx(want)
        assert b(0, b.x1[0] / 2) == b.values[0, 0]
        assert b(0, b.x1[-1] * 2) == 0.0


class TestSmoothFit:
    def test_refinement_shrinks_gap(self, setup):
        m, ax1, ax2, grid, field = setup
        b64 = hjb.extract_boundary(field)
        fine = hjb.Grid2D(np.geomspace(grid.nodes1[0], grid.nodes1[-1], 128),
                          np.geomspace(grid.nodes2[0], grid.nodes2[-1], 128))
        f128 = hjb.solve_vi(m, fine, ax1, ax2, n_cut=field.cutoff_n,
                            w0=hjb.interp_field(field, fine))
        b128 = hjb.extract_boundary(f128)
        for r in range(field.n_regimes):
            g64 = hjb.smooth_fit_gap(field, b64, r)
            g128 = hjb.smooth_fit_gap(f128, b128, r)
            assert g64 > 0 and g128 > 0
            assert g64 / g128 >= 1.5

    def test_single_regime_bound(self):
        # small kappa leaves only a sliver of negative running cost near the
        # origin; the fit defect must stay within the curvature-based bound
        m = detection_model(mu=(1.0,), p=(1.0, 1.0),
                            q_rates=np.zeros((1, 1)), c=8.0)
        a1 = onedim.solve_axis_problem(m, 1)
        a2 = onedim.solve_axis_problem(m, 2)
        grid = hjb.make_grid(a1, a2)
        field = hjb.solve_vi(m, grid, a1, a2, n_cut=a1.cutoff_n)
        b = hjb.extract_boundary(field)
        gap = hjb.smooth_fit_gap(field, b, 0)
        g1, g2 = grid.nodes1, grid.nodes2
        d22max, h_loc = 0.0, 0.0
        for i in range(g1.size):
            j = int(np.searchsorted(g2, b(0, g1[i])))
            if j < 3 or j >= g2.size:
                continue
            h_loc = max(h_loc, g2[j] - g2[j - 1])
            for jj in (j - 2, j - 1, j):
                hm, hp = g2[jj] - g2[jj - 1], g2[jj + 1] - g2[jj]
                d22 = 2 * ((field.w[0, i, jj + 1] - field.w[0, i, jj]) / hp
                           - (field.w[0, i, jj] - field.w[0, i, jj - 1]) / hm) \
                    / (hm + hp)
                d22max = max(d22max, abs(d22))
        assert gap > 0
        assert gap <= 10 * h_loc * d22max


class TestInterpAndRefine:
    def test_bilinear_exact_on_affine(self):
        src = hjb.Grid2D(np.geomspace(0.5, 8.0, 17), np.geomspace(0.5, 8.0, 17))
        w = -1.0 - 0.1 * src.nodes1[:, None] - 0.2 * src.nodes2[None, :]
        field = hjb.ValueField(grid=src, w=w[None], cutoff_n=np.inf,
                               residual=0.0, sweeps=0)
        dst = hjb.Grid2D(np.geomspace(0.6, 7.0, 21), np.geomspace(0.7, 6.0, 19))
        got = hjb.interp_field(field, dst)
        want = -1.0 - 0.1 * dst.nodes1[:, None] - 0.2 * dst.nodes2[None, :]
        np.testing.assert_allclose(got[0], want, rtol=1e-12)

    def test_continuation_matches_cold_solve(self, setup):
        m, ax1, ax2, grid, field = setup
        warm = hjb.solve_vi_refined(m, grid, ax1, ax2, n_cut=field.cutoff_n)
        assert np.abs(warm.w - field.w).max() <= 1e-6


class TestCsv:
    def test_field_round_trip(self, setup):
        _, _, _, grid, field = setup
        buf = io.StringIO()
        hjb.dump_field_csv(field, buf, comments=("run a",))
        lines = buf.getvalue().splitlines()
        assert lines[0] == "# run a"
        assert lines[1] == "x1,x2,regime,w"
        assert len(lines) == 2 + field.n_regimes * grid.n1 * grid.n2
        x1, x2, r, w = lines[2].split(",")
        assert float(x1) == grid.nodes1[0] and int(r) == 0
        assert float(w) == field.w[0, 0, 0]

    def test_boundary_round_trip(self, setup):
        b = hjb.extract_boundary(setup[4])
        buf = io.StringIO()
        hjb.dump_boundary_csv(b, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "regime,x1,b"
        assert len(lines) == 1 + b.n_regimes * b.x1.size
        r, x1, v = lines[1].split(",")
        assert (int(r), float(x1), float(v)) == (0, b.x1[0], b.values[0, 0])
