"""Two-dimensional variational-inequality solver on a log-spaced box.

For each regime the field w solves min(L w - lambda w + H^N, -w) = 0 on the
interior, where L couples the regimes through the generator row.  Dirichlet
data: the one-dimensional axis profiles on the two min edges, 0 on the two
far edges.  The far edges must lie inside the stopping region; that is
guarded by requiring H >= 0 there.

The stencil is the two-axis product of the one-dimensional one: central
differences for the diffusion, drift taken central where the resulting
off-diagonals stay nonnegative and upwinded where they would not, so every
row is an M-matrix row.  Projected Gauss-Seidel sweeps in red-black order
(regimes in sequence within a color); as in the one-dimensional module,
relaxation factors above ~1 are unstable for this nonsymmetric system, so
omega defaults to 1.
"""

from dataclasses import dataclass

import numpy as np

from .boundary import Boundary
from .onedim import SolverError, axis_dirichlet_data

RESIDUAL_TOL = 1e-8
BOUNDARY_TOL = 1e-7


@dataclass(frozen=True)
class Grid2D:
    nodes1: np.ndarray
    nodes2: np.ndarray

    def __post_init__(self):
        for name in ("nodes1", "nodes2"):
            g = np.asarray(getattr(self, name), dtype=float)
            if g.ndim != 1 or g.size < 16:
                raise ValueError("grid needs at least 16 nodes per axis")
            if g[0] <= 0 or np.any(np.diff(g) <= 0):
                raise ValueError("grid nodes must be increasing and positive")
            object.__setattr__(self, name, g)

    @property
    def n1(self):
        return self.nodes1.size

    @property
    def n2(self):
        return self.nodes2.size


def make_grid(axis1, axis2, n1=64, n2=64, x_min=1e-3, span=2.0):
    """Log-spaced box sized off the axis thresholds.

    Both far edges sit at span * max over axes and regimes of the axis
    thresholds, far enough that the whole far edge lies in the stopping
    region for affine costs.
    """
    if axis1.axis != 1 or axis2.axis != 2:
        raise ValueError("pass the axis-1 and axis-2 solutions in order")
    top = max(float(np.nanmax(axis1.thresholds)),
              float(np.nanmax(axis2.thresholds)))
    if not np.isfinite(top) or top <= x_min:
        raise ValueError("axis thresholds give no usable far-field scale")
    edge = span * top
    return Grid2D(nodes1=np.geomspace(x_min, edge, n1),
                  nodes2=np.geomspace(x_min, edge, n2))


@dataclass(frozen=True)
class ValueField:
    grid: Grid2D
    w: np.ndarray        # (n_regimes, n1, n2), <= 0
    cutoff_n: float
    residual: float
    sweeps: int

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 3 or w.shape[1:] != (self.grid.n1, self.grid.n2):
            raise ValueError("field shape does not match the grid")
        if np.any(w > 1e-9):
            raise ValueError("field has positive entries")
        object.__setattr__(self, "w", w)

    @property
    def n_regimes(self):
        return self.w.shape[0]


def _axis_coefs(mu, d, h_lo, h_hi):
    """Off-diagonal stencil weights along one axis, all nonnegative.

    mu, d are (n1, n2) drift and diffusion fields; h_lo/h_hi broadcast as the
    node spacings along the axis.  Central drift is kept wherever both
    resulting weights stay nonnegative, otherwise that node upwinds.
    """
    span = h_lo + h_hi
    dif_lo = 2.0 * d / (h_lo * span)
    dif_hi = 2.0 * d / (h_hi * span)
    c_lo = dif_lo - mu * h_hi / (h_lo * span)
    c_hi = dif_hi + mu * h_lo / (h_hi * span)
    central_ok = (c_lo >= 0.0) & (c_hi >= 0.0)
    c_lo = np.where(central_ok, c_lo, dif_lo + np.maximum(-mu, 0.0) / h_lo)
    c_hi = np.where(central_ok, c_hi, dif_hi + np.maximum(mu, 0.0) / h_hi)
    return c_lo, c_hi


def _assemble(m, grid):
    """Per-regime stencil weights on the full node lattice.

    Returns (c_e, c_w, c_n, c_s, diag), each (n_regimes, n1, n2); entries on
    the boundary ring are meaningless and never read.
    """
    g1, g2 = grid.nodes1, grid.nodes2
    x1 = g1[:, None]
    x2 = g2[None, :]
    h1 = np.diff(g1)
    h2 = np.diff(g2)
    # interior spacings broadcast to (n1, n2); edge entries padded with 1
    h1_lo = np.ones_like(g1)
    h1_hi = np.ones_like(g1)
    h1_lo[1:] = h1
    h1_hi[:-1] = h1
    h2_lo = np.ones_like(g2)
    h2_hi = np.ones_like(g2)
    h2_lo[1:] = h2
    h2_hi[:-1] = h2

    n_reg = m.n_regimes
    shape = (n_reg, g1.size, g2.size)
    c_e = np.empty(shape)
    c_w = np.empty(shape)
    c_n = np.empty(shape)
    c_s = np.empty(shape)
    diag = np.empty(shape)
    for r in range(n_reg):
        mu1 = m.a[r, 0] + m.b[r, 0, 0] * x1 + m.b[r, 0, 1] * x2
        mu2 = m.a[r, 1] + m.b[r, 1, 0] * x1 + m.b[r, 1, 1] * x2
        d1 = 0.5 * (m.sigma[r, 0] * x1) ** 2 + np.zeros_like(x2)
        d2 = 0.5 * (m.sigma[r, 1] * x2) ** 2 + np.zeros_like(x1)
        c_w[r], c_e[r] = _axis_coefs(mu1, d1, h1_lo[:, None], h1_hi[:, None])
        c_s[r], c_n[r] = _axis_coefs(mu2, d2, h2_lo[None, :], h2_hi[None, :])
        diag[r] = -(c_e[r] + c_w[r] + c_n[r] + c_s[r]) \
            + m.q.rates[r, r] - m.lam[r]
    return c_e, c_w, c_n, c_s, diag


def solve_vi(m, grid, axis1, axis2, n_cut=np.inf, tol=RESIDUAL_TOL,
             omega=1.0, max_sweeps=200_000, w0=None, check_every=25):
    """Solve the regime-coupled obstacle problem on the box.

    n_cut caps the running cost at min(H, n_cut); pass np.inf for the raw
    cost (bounded on the box anyway).  w0 warm-starts the interior.  Raises
    SolverError when a far edge leaves the stopping region or the sweeps
    stall before the complementarity residual drops to tol.
    """
    if axis1.axis != 1 or axis2.axis != 2:
        raise ValueError("pass the axis-1 and axis-2 solutions in order")
    if not n_cut > 0:
        raise ValueError("cost cutoff must be positive")
    g1, g2 = grid.nodes1, grid.nodes2
    n1, n2 = g1.size, g2.size
    n_reg = m.n_regimes

    p1, p2, kappa = m.cost.p1, m.cost.p2, m.cost.kappa
    h_raw = (p1[:, None, None] * g1[None, :, None]
             + p2[:, None, None] * g2[None, None, :]
             - kappa[:, None, None])
    far_min = min(float(h_raw[:, -1, :].min()), float(h_raw[:, :, -1].min()))
    if far_min < 0:
        raise SolverError(
            "far edge is not inside the stopping region (cost %.3g < 0 "
            "there); enlarge the grid" % far_min)
    h_cut = np.minimum(h_raw, n_cut)

    c_e, c_w, c_n, c_s, diag = _assemble(m, grid)

    w = np.zeros((n_reg, n1, n2))
    if w0 is not None:
        w0 = np.asarray(w0, dtype=float)
        if w0.shape != w.shape:
            raise ValueError("warm start shape does not match the grid")
        w[:] = np.minimum(w0, 0.0)
    for r in range(n_reg):
        w[r, :, 0] = axis_dirichlet_data(axis1, r)(g1)
        w[r, 0, :] = axis_dirichlet_data(axis2, r)(g2)
        w[r, -1, :] = 0.0
        w[r, :, -1] = 0.0

    # flat interior bookkeeping; moving one i step is +-n2 in flat order
    ii, jj = np.meshgrid(np.arange(1, n1 - 1), np.arange(1, n2 - 1),
                         indexing="ij")
    idx_c = (ii * n2 + jj).ravel()
    parity = ((ii + jj) % 2).ravel()
    gath = {}
    for name, arr in (("e", c_e), ("w", c_w), ("n", c_n), ("s", c_s),
                      ("d", diag), ("h", h_cut)):
        gath[name] = np.stack([arr[r].ravel()[idx_c] for r in range(n_reg)])
    rec = 1.0 / gath["d"]

    colors = []
    for want in (0, 1):
        sel = parity == want
        colors.append({
            "c": idx_c[sel], "e": idx_c[sel] + n2, "w": idx_c[sel] - n2,
            "n": idx_c[sel] + 1, "s": idx_c[sel] - 1,
            "ce": gath["e"][:, sel], "cw": gath["w"][:, sel],
            "cn": gath["n"][:, sel], "cs": gath["s"][:, sel],
            "rec": rec[:, sel], "h": gath["h"][:, sel],
        })
    idx_e, idx_w = idx_c + n2, idx_c - n2
    idx_n, idx_s = idx_c + 1, idx_c - 1

    wf = w.reshape(n_reg, n1 * n2)
    q = m.q.rates

    def residual():
        worst = 0.0
        for r in range(n_reg):
            lhs = (gath["d"][r] * wf[r][idx_c]
                   + gath["e"][r] * wf[r][idx_e]
                   + gath["w"][r] * wf[r][idx_w]
                   + gath["n"][r] * wf[r][idx_n]
                   + gath["s"][r] * wf[r][idx_s]
                   + gath["h"][r])
            for s in range(n_reg):
                if s != r:
                    lhs += q[r, s] * wf[s][idx_c]
            res = np.minimum(lhs, -wf[r][idx_c])
            worst = max(worst, float(np.abs(res).max()))
        return worst

    best = residual()
    if best <= tol:
        return ValueField(grid=grid, w=w, cutoff_n=float(n_cut),
                          residual=best, sweeps=0)

    sweeps = 0
    while sweeps < max_sweeps:
        for col in colors:
            for r in range(n_reg):
                neigh = (col["ce"][r] * wf[r][col["e"]]
                         + col["cw"][r] * wf[r][col["w"]]
                         + col["cn"][r] * wf[r][col["n"]]
                         + col["cs"][r] * wf[r][col["s"]]
                         + col["h"][r])
                for s in range(n_reg):
                    if s != r:
                        neigh += q[r, s] * wf[s][col["c"]]
                cur = wf[r][col["c"]]
                gs = -neigh * col["rec"][r]
                wf[r][col["c"]] = np.minimum(0.0, cur + omega * (gs - cur))
        sweeps += 1
        if sweeps % check_every == 0:
            best = residual()
            if best <= tol:
                return ValueField(grid=grid, w=w, cutoff_n=float(n_cut),
                                  residual=best, sweeps=sweeps)
    best = residual()
    if best <= tol:
        return ValueField(grid=grid, w=w, cutoff_n=float(n_cut),
                          residual=best, sweeps=sweeps)
    raise SolverError("variational inequality solver stalled: residual "
                      "%.3e after %d sweeps" % (best, sweeps))


def interp_field(field, grid):
    """Bilinear resample of a field onto another grid, for warm starts."""
    src1, src2 = field.grid.nodes1, field.grid.nodes2
    i1 = np.clip(np.searchsorted(src1, grid.nodes1) - 1, 0, src1.size - 2)
    i2 = np.clip(np.searchsorted(src2, grid.nodes2) - 1, 0, src2.size - 2)
    t1 = np.clip((grid.nodes1 - src1[i1]) / (src1[i1 + 1] - src1[i1]), 0, 1)
    t2 = np.clip((grid.nodes2 - src2[i2]) / (src2[i2 + 1] - src2[i2]), 0, 1)
    out = np.empty((field.n_regimes, grid.n1, grid.n2))
    for r in range(field.n_regimes):
        lo = field.w[r][i1][:, i2] * (1 - t2) + field.w[r][i1][:, i2 + 1] * t2
        hi = (field.w[r][i1 + 1][:, i2] * (1 - t2)
              + field.w[r][i1 + 1][:, i2 + 1] * t2)
        out[r] = lo * (1 - t1[:, None]) + hi * t1[:, None]
    return out


def solve_vi_refined(m, grid, axis1, axis2, n_cut=np.inf, tol=RESIDUAL_TOL,
                     coarse_n=32, **kw):
    """solve_vi with a coarse-grid continuation warm start."""
    if min(grid.n1, grid.n2) > coarse_n:
        coarse = Grid2D(
            nodes1=np.geomspace(grid.nodes1[0], grid.nodes1[-1], coarse_n),
            nodes2=np.geomspace(grid.nodes2[0], grid.nodes2[-1], coarse_n))
        base = solve_vi(m, coarse, axis1, axis2, n_cut=n_cut, tol=tol * 100,
                        **kw)
        kw = dict(kw, w0=interp_field(base, grid))
    return solve_vi(m, grid, axis1, axis2, n_cut=n_cut, tol=tol, **kw)


def extract_boundary(field, tol=BOUNDARY_TOL):
    """Per-regime stopping curves read off the field.

    In each x1 column the curve sits at the first x2 node with w >= -tol,
    linearly interpolated against the neighboring node still below -tol, and
    clipped to 0 when the first node already qualifies.  Covers every regime
    at once; one regime's curve is boundary.values[iota].
    """
    g1, g2 = field.grid.nodes1, field.grid.nodes2
    vals = np.zeros((field.n_regimes, g1.size))
    for r in range(field.n_regimes):
        stopped = field.w[r] >= -tol
        jstar = np.argmax(stopped, axis=1)
        for i in range(g1.size):
            j = jstar[i]
            if j == 0:
                continue
            w_lo = field.w[r, i, j - 1]
            w_hi = field.w[r, i, j]
            theta = (-tol - w_lo) / (w_hi - w_lo)
            vals[r, i] = g2[j - 1] + theta * (g2[j] - g2[j - 1])
    return Boundary(x1=g1.copy(), values=vals)


def smooth_fit_gap(field, b, iota):
    """Largest one-sided slope of w into the stopping set, for regime iota.

    Per x1 column: the divided difference of w across the last continuation
    node and the first stopped one; at a smooth fit that slope vanishes as
    the mesh refines.  Columns count only when at least two continuation
    nodes sit under the curve, which keeps the seam with the bottom edge
    data and the dive to zero near the axis-1 threshold out of the
    measurement.  Returns 0 when no column qualifies (w identically 0).
    """
    g1, g2 = field.grid.nodes1, field.grid.nodes2
    gap = 0.0
    for i in range(g1.size):
        j = int(np.searchsorted(g2, b(iota, g1[i])))
        if j < 3 or j >= g2.size:
            continue
        slope = (field.w[iota, i, j] - field.w[iota, i, j - 1]) \
            / (g2[j] - g2[j - 1])
        gap = max(gap, abs(float(slope)))
    return gap


def dump_field_csv(field, fileobj, comments=()):
    """x1,x2,regime,w rows, regime-major then lattice order."""
    for line in comments:
        fileobj.write("# %s\n" % line)
    fileobj.write("x1,x2,regime,w\n")
    g1, g2 = field.grid.nodes1, field.grid.nodes2
    for r in range(field.n_regimes):
        for i in range(g1.size):
            for j in range(g2.size):
                fileobj.write("%.17g,%.17g,%d,%.17g\n"
                              % (g1[i], g2[j], r, field.w[r, i, j]))


def dump_boundary_csv(b, fileobj, comments=()):
    """regime,x1,b rows, regime-major."""
    for line in comments:
        fileobj.write("# %s\n" % line)
    fileobj.write("regime,x1,b\n")
    for r in range(b.n_regimes):
        for i in range(b.x1.size):
            fileobj.write("%d,%.17g,%.17g\n" % (r, b.x1[i], b.values[r, i]))
