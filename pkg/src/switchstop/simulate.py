"""Euler-Maruyama simulation of the regime-switching linear diffusion.

Single-path simulation inserts every regime jump as an exact breakpoint, so
coefficients are constant on each step and the discount integral Lambda is
computed without quadrature error.  Batch simulation steps a uniform dt-grid
vectorized across paths; a step containing a regime jump is split at the jump
time, with the Brownian increment divided by a bridge draw so each slice has
the correct law.  Negative Euler overshoots are clamped to zero and counted.

Batches are chunked at a fixed size and each chunk owns a counter-based
stream, so results do not depend on execution schedule.
"""

from dataclasses import dataclass

import numpy as np

from .model import check_assumptions
from .regimes import sample_regime_path
from .rng import LANE_PILOT, stream, substream

CHUNK = 16384


@dataclass(frozen=True)
class MCConfig:
    """Knobs shared by every Monte-Carlo estimator.

    tail_eps bounds the discarded tail of the free discounted integral, so it
    fixes the truncation horizon; max_unstopped is the largest tolerated
    fraction of paths still running when the stopped estimator hits its cap.
    """

    n_paths: int = 100_000
    dt: float = 1e-3
    seed: int = 0
    tail_eps: float = 1e-3
    max_unstopped: float = 0.01

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.tail_eps > 0:
            raise ValueError("tail_eps must be positive")
        if not 0.0 <= self.max_unstopped <= 1.0:
            raise ValueError("max_unstopped must lie in [0, 1]")


@dataclass(frozen=True)
class PathConfig:
    dt: float
    horizon: float
    seed: int
    substream: int = 0

    def __post_init__(self):
        if not self.dt > 0 or not self.horizon > 0:
            raise ValueError("dt and horizon must be positive")
        if self.dt > self.horizon:
            raise ValueError("dt must not exceed horizon")


@dataclass(frozen=True)
class SamplePath:
    """Discrete path of (regime, X, Lambda) on a grid containing all jump times."""

    times: np.ndarray      # (k,) increasing, starts at 0
    regimes: np.ndarray    # (k,) regime holding on [t_j, t_{j+1})
    x: np.ndarray          # (k, 2) componentwise >= 0
    lam_integral: np.ndarray  # (k,) Lambda_t, exact piecewise integral
    clamp_count: int

    def __post_init__(self):
        t = self.times
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("times must be increasing and start at 0")
        if self.lam_integral[0] != 0.0 or np.any(np.diff(self.lam_integral) < 0):
            raise ValueError("Lambda must be nondecreasing from 0")
        if np.any(self.x < 0):
            raise ValueError("stored states must be componentwise >= 0")

    @property
    def horizon(self):
        return float(self.times[-1])


def _require_a1(m):
    report = check_assumptions(m)
    if not report["a1"]["ok"]:
        raise ValueError("coefficient check failed: " + "; ".join(report["a1"]["problems"]))


def _breakpoint_grid(dt, horizon, jump_times):
    k = int(np.ceil(horizon / dt - 1e-12))
    grid = np.minimum(np.arange(k + 1) * dt, horizon)
    grid[-1] = horizon
    return np.union1d(grid, jump_times)


def _scalar_steps(m, reg, times, dw, x0):
    """Euler recursion in plain floats; reg[j] governs [times[j], times[j+1])."""
    a, b, s = m.a, m.b, m.sigma
    x1, x2 = float(x0[0]), float(x0[1])
    out = np.empty((times.size, 2))
    out[0] = x1, x2
    clamps = 0
    for j in range(times.size - 1):
        r = reg[j]
        d = times[j + 1] - times[j]
        n1 = x1 + (a[r, 0] + b[r, 0, 0] * x1 + b[r, 0, 1] * x2) * d + s[r, 0] * x1 * dw[j, 0]
        n2 = x2 + (a[r, 1] + b[r, 1, 0] * x1 + b[r, 1, 1] * x2) * d + s[r, 1] * x2 * dw[j, 1]
        if n1 < 0.0:
            n1 = 0.0
            clamps += 1
        if n2 < 0.0:
            n2 = 0.0
            clamps += 1
        x1, x2 = n1, n2
        out[j + 1] = n1, n2
    return out, clamps


def simulate_path(m, iota0, x0, cfg, validate=True):
    """One path of (alpha, X) on the union of the dt-grid and exact jump times."""
    x0 = np.asarray(x0, dtype=float)
    if np.any(x0 < 0):
        raise ValueError("x0 must be componentwise >= 0")
    if validate:
        _require_a1(m)
    g = stream(cfg.seed, cfg.substream)
    rpath = sample_regime_path(m.q, iota0, cfg.horizon, g)
    times = _breakpoint_grid(cfg.dt, cfg.horizon, rpath.jump_times)
    reg = rpath.state_at(times)
    diffs = np.diff(times)
    dw = g.standard_normal((diffs.size, 2)) * np.sqrt(diffs)[:, None]
    x, clamps = _scalar_steps(m, reg, times, dw, x0)
    lam = np.concatenate([[0.0], np.cumsum(m.lam[reg[:-1]] * diffs)])
    return SamplePath(times=times, regimes=reg, x=x, lam_integral=lam, clamp_count=clamps)


def simulate_coupled(m, iota0, x0, y0, cfg, validate=True):
    """Two paths sharing Brownian increments and the regime path; needs x0 <= y0."""
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    if np.any(x0 > y0):
        raise ValueError("x0 must be componentwise <= y0")
    if np.any(x0 < 0):
        raise ValueError("x0 must be componentwise >= 0")
    if validate:
        _require_a1(m)
    g = stream(cfg.seed, cfg.substream)
    rpath = sample_regime_path(m.q, iota0, cfg.horizon, g)
    times = _breakpoint_grid(cfg.dt, cfg.horizon, rpath.jump_times)
    reg = rpath.state_at(times)
    diffs = np.diff(times)
    dw = g.standard_normal((diffs.size, 2)) * np.sqrt(diffs)[:, None]
    xlo, clo = _scalar_steps(m, reg, times, dw, x0)
    xhi, chi = _scalar_steps(m, reg, times, dw, y0)
    lam = np.concatenate([[0.0], np.cumsum(m.lam[reg[:-1]] * diffs)])
    lower = SamplePath(times, reg, xlo, lam, clo)
    upper = SamplePath(times, reg, xhi, lam, chi)
    return lower, upper


def discount_at(path, t):
    """e^{-Lambda_t} at a stored grid time t."""
    i = int(np.searchsorted(path.times, t))
    for j in (i, i - 1):
        if 0 <= j < path.times.size and abs(path.times[j] - t) <= 1e-12 * max(1.0, abs(t)):
            return float(np.exp(-path.lam_integral[j]))
    raise ValueError(f"t={t} is not a stored grid time")


def dump_csv(path, fileobj, comments=()):
    """Write a path as CSV: t, regime, x1, x2, Lambda."""
    for line in comments:
        fileobj.write(f"# {line}\n")
    fileobj.write("t,regime,x1,x2,Lambda\n")
    for j in range(path.times.size):
        fileobj.write("%.17g,%d,%.17g,%.17g,%.17g\n"
                      % (path.times[j], path.regimes[j], path.x[j, 0],
                         path.x[j, 1], path.lam_integral[j]))


# ---------------------------------------------------------------------------
# batch machinery


@dataclass(frozen=True)
class JumpBatch:
    """Padded per-path regime jump sequences for one chunk of paths.

    times has one trailing +inf column beyond the longest sequence so a path's
    "next jump" lookup never indexes out of range; states_after[p, j] is the
    regime entered at times[p, j].
    """

    initial_state: int
    times: np.ndarray        # (n, kmax + 1), padded with +inf
    states_after: np.ndarray  # (n, kmax) int64
    n_jumps: np.ndarray      # (n,) int64


def sample_jump_batch(q, iota0, horizon, n_paths, rng):
    """Exact CTMC jump sequences for n_paths paths, drawn from one stream."""
    rates = -np.diag(q.rates).copy()
    p = q.rates / np.where(rates > 0, rates, 1.0)[:, None]
    np.fill_diagonal(p, 0.0)
    cum = np.cumsum(p, axis=1)
    # guard the last edge against fp undershoot so searchsorted stays in range
    live = rates > 0
    cum[live] /= cum[live][:, -1:]

    t = np.zeros(n_paths)
    s = np.full(n_paths, iota0, dtype=np.int64)
    alive = np.ones(n_paths, dtype=bool)
    rec_idx, rec_t, rec_s = [], [], []
    while True:
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            break
        r = rates[s[idx]]
        absorbed = r <= 0
        if absorbed.any():
            alive[idx[absorbed]] = False
            idx = idx[~absorbed]
            if idx.size == 0:
                break
            r = r[~absorbed]
        t[idx] += rng.exponential(1.0, idx.size) / r
        over = t[idx] > horizon
        alive[idx[over]] = False
        idx = idx[~over]
        if idx.size == 0:
            continue
        u = rng.random(idx.size)
        nxt = (u[:, None] > cum[s[idx]]).sum(axis=1)
        s[idx] = nxt
        rec_idx.append(idx)
        rec_t.append(t[idx].copy())
        rec_s.append(nxt)

    counts = np.zeros(n_paths, dtype=np.int64)
    if rec_idx:
        all_idx = np.concatenate(rec_idx)
        counts = np.bincount(all_idx, minlength=n_paths)
    kmax = int(counts.max()) if n_paths else 0
    times = np.full((n_paths, kmax + 1), np.inf)
    states = np.zeros((n_paths, max(kmax, 1)), dtype=np.int64)
    if rec_idx:
        all_t = np.concatenate(rec_t)
        all_s = np.concatenate(rec_s)
        order = np.argsort(all_idx, kind="stable")  # per-path time order kept
        all_idx, all_t, all_s = all_idx[order], all_t[order], all_s[order]
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        pos = np.arange(all_idx.size) - starts[all_idx]
        times[all_idx, pos] = all_t
        states[all_idx, pos] = all_s
    return JumpBatch(initial_state=iota0, times=times, states_after=states,
                     n_jumps=counts)


class _Coefs:
    """Per-regime coefficient tables gathered once per model."""

    def __init__(self, m):
        self.a = np.asarray(m.a)
        self.b = np.asarray(m.b)
        self.s = np.asarray(m.sigma)
        self.b_is_diagonal = not np.any(self.b[:, [0, 1], [1, 0]])


def _euler_batch(coefs, x, regime, delta, dw):
    """One vectorized Euler update; delta is scalar or (n,). Returns clamp count."""
    a = coefs.a[regime]
    s = coefs.s[regime]
    d = delta if np.isscalar(delta) else delta[:, None]
    if coefs.b_is_diagonal:
        diag = coefs.b[regime][:, [0, 1], [0, 1]]
        xn = x + (a + diag * x) * d + s * x * dw
    else:
        bx = np.einsum("pij,pj->pi", coefs.b[regime], x)
        xn = x + (a + bx) * d + s * x * dw
    neg = xn < 0
    clamps = int(np.count_nonzero(neg))
    if clamps:
        xn[neg] = 0.0
    return xn, clamps


class _RegimeCursor:
    """Tracks each path's current regime and next jump time over a JumpBatch."""

    def __init__(self, jumps, n):
        self.jumps = jumps
        self.ptr = np.zeros(n, dtype=np.int64)
        self.regime = np.full(n, jumps.initial_state, dtype=np.int64)
        self.next_t = jumps.times[:, 0].copy()

    def advance_through(self, rows, t_next):
        """Consume every jump at times <= t_next for the given rows."""
        rows = np.asarray(rows)
        while rows.size:
            due = self.next_t[rows] <= t_next
            rows = rows[due]
            if rows.size == 0:
                break
            self.regime[rows] = self.jumps.states_after[rows, self.ptr[rows]]
            self.ptr[rows] += 1
            self.next_t[rows] = self.jumps.times[rows, self.ptr[rows]]


def _advance_step(coefs, x, cursor, t0, t1, dw, rng_bridge):
    """Advance one uniform step, splitting at the first regime jump if present.

    The split uses a Brownian-bridge draw so each slice of the increment has
    variance equal to its length.  Second and later jumps inside one step keep
    the regime sequence exact but share the post-jump slice; at jump-rate *
    dt ~ 1e-3 that event has probability ~dt^2 per step.
    """
    delta = t1 - t0
    jumping = cursor.next_t <= t1
    clamps = 0
    if not jumping.any():
        x, clamps = _euler_batch(coefs, x, cursor.regime, delta, dw)
        return x, clamps
    rows = np.nonzero(jumping)[0]
    cont = np.nonzero(~jumping)[0]
    if cont.size:
        x[cont], c = _euler_batch(coefs, x[cont], cursor.regime[cont], delta, dw[cont])
        clamps += c
    s = cursor.next_t[rows]
    d1 = s - t0
    d2 = t1 - s
    z = rng_bridge.standard_normal((rows.size, 2))
    dwr = dw[rows]
    dw1 = (d1 / delta)[:, None] * dwr + np.sqrt(d1 * d2 / delta)[:, None] * z
    xr, c = _euler_batch(coefs, x[rows], cursor.regime[rows], d1, dw1)
    clamps += c
    cursor.advance_through(rows, t1)
    xr, c = _euler_batch(coefs, xr, cursor.regime[rows], d2, dwr - dw1)
    clamps += c
    x[rows] = xr
    return x, clamps


def batch_terminal_state(m, iota0, x0, t_end, dt, n_paths, seed, lane=LANE_PILOT,
                         paired=False, validate=True):
    """Terminal states X_{t_end} for a batch of paths on the uniform dt-grid.

    With paired=True a second state array is advanced on the 2*dt grid using
    the pairwise sums of the same increments, isolating the discretization
    bias of the coarser grid from Monte Carlo noise.  Returns a dict with
    'x' (n, 2), 'clamp_count', 'step_count' and, when paired, 'x_coarse'.
    """
    if validate:
        _require_a1(m)
    x0 = np.asarray(x0, dtype=float)
    n_steps = int(np.ceil(t_end / dt - 1e-12))
    if paired and n_steps % 2:
        raise ValueError("paired refinement needs an even number of steps")
    coefs = _Coefs(m)
    out = np.empty((n_paths, 2))
    out_c = np.empty((n_paths, 2)) if paired else None
    clamp_count = 0
    for c0 in range(0, n_paths, CHUNK):
        n = min(CHUNK, n_paths - c0)
        chunk_idx = c0 // CHUNK
        g = stream(seed, substream(lane, 2 * chunk_idx))
        g_bridge = stream(seed, substream(lane, 2 * chunk_idx + 1))
        jumps = sample_jump_batch(m.q, iota0, t_end, n, g)
        x = np.tile(x0, (n, 1))
        cur = _RegimeCursor(jumps, n)
        if paired:
            xc = np.tile(x0, (n, 1))
            cur_c = _RegimeCursor(jumps, n)
            dw_prev = None
        for k in range(n_steps):
            t0 = k * dt
            t1 = min((k + 1) * dt, t_end)
            dw = g.standard_normal((n, 2)) * np.sqrt(t1 - t0)
            x, cl = _advance_step(coefs, x, cur, t0, t1, dw, g_bridge)
            clamp_count += cl
            if paired:
                if k % 2 == 0:
                    dw_prev = dw
                else:
                    xc, cl = _advance_step(coefs, xc, cur_c, (k - 1) * dt, t1,
                                           dw_prev + dw, g_bridge)
                    clamp_count += cl
        out[c0:c0 + n] = x
        if paired:
            out_c[c0:c0 + n] = xc
    result = {"x": out, "clamp_count": clamp_count, "step_count": n_paths * n_steps}
    if paired:
        result["x_coarse"] = out_c
    return result
