"""Axis-restricted one-dimensional stopping problems.

With one coordinate pinned at zero the other follows the scalar linear SDE
dZ = (a^i(alpha) + b^{ii}(alpha) Z) dt + sigma^i(alpha) Z dW, and the value
function solves the regime-coupled variational inequality

    min( L1 w - lambda w + H^N, -w ) = 0,

whose stopping set is a half-line [xbar_iota, inf) per regime.  The solver
discretizes L1 on a log-spaced grid with a positivity-preserving
central/upwind stencil and runs projected SOR on the resulting linear
complementarity problem.  Thresholds feed the 2-D solver twice over: as
Dirichlet edge data and as a-priori brackets for the boundary curve.

The system matrix is a nonsymmetric M-matrix (convection gets upwinded), for
which projected SOR is provably convergent only up to a relaxation factor
near 1; omega defaults to exactly 1 and larger values are at caller's risk.
"""

from dataclasses import dataclass

import numpy as np

TOL_STOP = 1e-7       # |w| below this counts as "stopped"
RESIDUAL_TOL = 1e-8   # complementarity sup-norm target


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class AxisSolution:
    """Converged axis problem: per-regime value profiles and thresholds."""

    axis: int
    grid: np.ndarray        # (n,) increasing, positive
    values: np.ndarray      # (n_regimes, n), <= 0
    thresholds: np.ndarray  # (n_regimes,)
    cutoff_n: float
    residual: float
    sweeps: int


def _axis_cost(m, axis):
    p = m.cost.p1 if axis == 1 else m.cost.p2
    return p, m.cost.kappa


def _stencil(m, axis, grid):
    """Off-diagonal operator coefficients c_lo, c_hi per (regime, node).

    Central differencing is used wherever it keeps both neighbor coefficients
    nonnegative, otherwise the drift term is upwinded; either way the operator
    rows annihilate constants, so the diagonal is -(c_lo + c_hi).  The last
    node is Dirichlet and carries no row.
    """
    i = axis - 1
    x = grid
    n = x.size
    nr = m.n_regimes
    h = np.diff(x)
    c_lo = np.zeros((nr, n))
    c_hi = np.zeros((nr, n))
    hm, hp = h[:-1], h[1:]
    span = hm + hp
    for r in range(nr):
        mu = m.a[r, i] + m.b[r, i, i] * x
        dif = 0.5 * m.sigma[r, i] ** 2 * x**2
        # interior nodes 1..n-2
        lo_c = 2 * dif[1:-1] / (hm * span) - mu[1:-1] * hp / (hm * span)
        hi_c = 2 * dif[1:-1] / (hp * span) + mu[1:-1] * hm / (hp * span)
        up = (lo_c < 0) | (hi_c < 0)
        if up.any():
            mu_up = mu[1:-1][up]
            base_lo = 2 * dif[1:-1][up] / (hm[up] * span[up])
            base_hi = 2 * dif[1:-1][up] / (hp[up] * span[up])
            lo_c[up] = base_lo + np.where(mu_up < 0, -mu_up / hm[up], 0.0)
            hi_c[up] = base_hi + np.where(mu_up > 0, mu_up / hp[up], 0.0)
        c_lo[r, 1:-1] = lo_c
        c_hi[r, 1:-1] = hi_c
        # left edge: diffusion ~ x_min^2 is dropped; one-sided drift only
        c_hi[r, 0] = max(mu[0], 0.0) / h[0]
    return c_lo, c_hi


def _psor(c_lo, c_hi, diag, coupling, h_cut, w0, omega, max_sweeps):
    """Projected SOR on min(A w + h, -w) = 0 with red-black node coloring.

    The regime coupling acts at the same node only, so nodes of one parity
    can be updated together; regimes are swept sequentially inside a color.
    """
    nr, n = h_cut.shape
    w = w0.copy()
    w[:, -1] = 0.0
    colors = [np.arange(0, n - 1, 2), np.arange(1, n - 1, 2)]
    q_off = coupling.copy()
    np.fill_diagonal(q_off, 0.0)
    residual = np.inf
    for sweep in range(1, max_sweeps + 1):
        for nodes in colors:
            for r in range(nr):
                # c_lo[r, 0] is zero, so the wrapped index -1 is inert
                neigh = c_lo[r, nodes] * w[r, nodes - 1] + c_hi[r, nodes] * w[r, (nodes + 1) % n]
                cpl = q_off[r] @ w[:, nodes]
                gs = -(h_cut[r, nodes] + neigh + cpl) / diag[r, nodes]
                w[r, nodes] = np.minimum(0.0, w[r, nodes] + omega * (gs - w[r, nodes]))
        if sweep % 25 == 0 or sweep == max_sweeps:
            residual = _residual(c_lo, c_hi, diag, q_off, h_cut, w)
            if residual <= RESIDUAL_TOL:
                return w, residual, sweep
    raise SolverError(f"projected SOR did not converge: residual {residual:.3e} "
                      f"after {max_sweeps} sweeps")


def _residual(c_lo, c_hi, diag, q_off, h_cut, w):
    n = w.shape[1]
    idx = np.arange(n - 1)
    aw = (diag[:, idx] * w[:, idx] + c_lo[:, idx] * w[:, idx - 1]
          + c_hi[:, idx] * w[:, (idx + 1) % n] + q_off @ w[:, idx] + h_cut[:, idx])
    return float(np.abs(np.minimum(aw, -w[:, idx])).max())


def _solve_on_grid(m, axis, n_cut, grid, omega, max_sweeps, w0=None):
    p, kappa = _axis_cost(m, axis)
    h_cut = np.minimum(p[:, None] * grid[None, :] - kappa[:, None], n_cut)
    c_lo, c_hi = _stencil(m, axis, grid)
    diag = -(c_lo + c_hi) + (np.diag(m.q.rates) - m.lam)[:, None]
    w0 = np.zeros_like(h_cut) if w0 is None else w0
    w, residual, sweeps = _psor(c_lo, c_hi, diag, m.q.rates, h_cut, w0, omega, max_sweeps)
    return w, residual, sweeps


def _thresholds(grid, w, tol=TOL_STOP):
    # the last node is Dirichlet data, not a solver statement about stopping
    out = np.full(w.shape[0], np.nan)
    for r in range(w.shape[0]):
        hit = np.nonzero(w[r, :-1] >= -tol)[0]
        out[r] = grid[hit[0]] if hit.size else np.nan
    return out


def solve_axis_problem(m, axis, n_cut=None, grid=None, n_nodes=257, x_min=1e-3,
                       omega=1.0, max_sweeps=200_000):
    """Solve the axis problem, choosing grid extent and cost cutoff if not given.

    grid may be an explicit increasing array, a (x_min, x_max, n_nodes) tuple,
    or None.  With None the right end is found by doubling until every
    threshold is interior, then fixed at four times the largest threshold;
    with n_cut None the cutoff starts at 10 |inf H| and doubles until no
    threshold moves by more than one local grid cell.
    """
    if axis not in (1, 2):
        raise ValueError("axis must be 1 or 2")
    p, kappa = _axis_cost(m, axis)

    auto_n = n_cut is None
    if auto_n:
        n_cut = 10.0 * abs(m.h_floor)
        if n_cut == 0.0:
            n_cut = 1.0

    def run(g, w0=None):
        w, res, sw = _solve_on_grid(m, axis, n_cut, g, omega, max_sweeps, w0)
        return w, _thresholds(g, w), res, sw

    if grid is not None and not isinstance(grid, tuple):
        g = np.asarray(grid, dtype=float)
    else:
        if isinstance(grid, tuple):
            lo, hi, n_nodes = grid
            g = np.geomspace(lo, hi, n_nodes)
        else:
            # doubling search: positive-part crossing of H is a lower bound
            x_max = 4.0 * float((kappa / p).max())
            x_max = max(x_max, 16 * x_min)
            for _ in range(40):
                g = np.geomspace(x_min, x_max, n_nodes)
                w, thr, res, sw = run(g)
                if not np.any(np.isnan(thr)) and thr.max() <= x_max / 2:
                    break
                x_max *= 2.0
            else:
                raise SolverError("threshold not interior after doubling search")
            g = np.geomspace(x_min, 4.0 * thr.max(), n_nodes)

    w, thr, res, sw = run(g)
    if np.any(np.isnan(thr)):
        h_raw_end = float((p * g[-1] - kappa).min())
        why = ("cost cutoff N too small" if h_raw_end > n_cut
               else "grid right end x_max too small")
        raise SolverError(f"stopping region empty on grid for some regime: {why} "
                          f"(x_max={g[-1]:.6g}, N={n_cut:.6g})")

    if auto_n:
        for _ in range(20):
            n_cut *= 2.0
            w2, thr2, res2, sw2 = run(g, w0=w)
            cell = g[np.minimum(np.searchsorted(g, thr2) + 1, g.size - 1)] - thr2
            if np.all(np.abs(thr2 - thr) < np.maximum(cell, 1e-12)):
                w, thr, res, sw = w2, thr2, res2, sw2
                break
            w, thr, res, sw = w2, thr2, res2, sw2
        else:
            raise SolverError("threshold did not stabilize under cutoff doubling")

    return AxisSolution(axis=axis, grid=g, values=w, thresholds=thr,
                        cutoff_n=float(n_cut), residual=res, sweeps=sw)


def axis_dirichlet_data(sol, iota):
    """Value profile on the axis as a callable: interpolated, 0 past the threshold."""
    grid = sol.grid
    vals = sol.values[iota]
    thr = sol.thresholds[iota]

    def profile(x):
        x = np.asarray(x, dtype=float)
        out = np.interp(x, grid, vals)
        out = np.where(x >= thr, 0.0, out)
        return out if out.ndim else float(out)

    return profile
