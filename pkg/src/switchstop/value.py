"""Policy values under a boundary rule, estimated by two routes.

estimate_value_stopped runs the rule tau = inf{t : X2_t >= b_alpha(X1_t)}
forward on the uniform grid and accumulates the discounted flow cost up to
the stop, discounting with the integrated per-regime rate.  The cap horizon
is 10x a pilot estimate of E[tau]; paths still running at the cap contribute
their truncated integral and a bound on the discarded tail is reported.

estimate_value_free prices the same curve through the indicator
representation shared with boundary.eval_G (constant discount rate only).
Both routes estimate the same number when the curve solves the boundary
integral equation, which is the agreement the cross-checks assert.

snell_martingale_check probes the dynamic-programming identity directly: the
running cost accrued to t ^ tau plus the discounted value at the state there
has constant expectation in t.  The value at interior states comes from a
bank of frozen-seed stopped-value estimates, one substream block per outer
path, so checkpoint differences are paired and most oracle noise cancels.
"""

import math
from dataclasses import dataclass

import numpy as np

from .boundary import _free_integral, _sup_abs_cost_under
from .model import eval_cost
from .onedim import SolverError
from .rng import (LANE_SNELL_INNER, LANE_SNELL_OUTER, LANE_VALUE_STOPPED,
                  stream, substream)
from .simulate import (CHUNK, _Coefs, _RegimeCursor, _advance_step,
                       _require_a1, sample_jump_batch)

_PILOT_OFF = 1 << 20   # substream block for the horizon pilot
_PILOT_N = 512


@dataclass(frozen=True)
class ValueEstimate:
    """Monte-Carlo value of running a boundary rule from one start point.

    tail_bound bounds the total discounted cost the truncation discarded:
    unstopped_fraction * sup|H| * e^{-lam_min T_cap} / lam_min.
    """

    mean: float
    std_error: float
    n_paths: int
    unstopped_fraction: float
    tail_bound: float = 0.0

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("std_error must be >= 0")
        if not 0.0 <= self.unstopped_fraction <= 1.0:
            raise ValueError("unstopped_fraction must lie in [0, 1]")


def _check_start(x):
    x = np.asarray(x, dtype=float)
    if x.shape != (2,):
        raise ValueError("x must be a 2-vector")
    if np.any(x < 0):
        raise ValueError("x must be componentwise >= 0")
    return x


def _tail_horizon(m, b, mc):
    """Horizon T with sup|H| e^{-lam_min T}/lam_min below tail_eps."""
    lam_min = float(np.min(m.lam))
    sup_h = _sup_abs_cost_under(m, b)
    if sup_h <= 0.0:
        return mc.dt
    return max(mc.dt, math.log(sup_h / (lam_min * mc.tail_eps)) / lam_min)


def _stopped_run(m, iota, x, b, mc, n_total, t_cap, lane, first_index):
    """Per-path discounted cost to the first grid crossing of the curve.

    Crossing detection happens at grid times only, and the integrand is
    zeroed at the first node inside the stopping set, matching the trapezoid
    convention of the free-representation estimator so the two routes share
    their O(dt) boundary-layer bias.  Returns (values, stopped, tau) arrays.
    """
    coefs = _Coefs(m)
    lam = np.asarray(m.lam, dtype=float)
    n_steps = int(math.ceil(t_cap / mc.dt - 1e-12))
    t_cap = n_steps * mc.dt
    vals = np.empty(n_total)
    stopped = np.empty(n_total, dtype=bool)
    taus = np.empty(n_total)
    for c0 in range(0, n_total, CHUNK):
        n = min(CHUNK, n_total - c0)
        ci = c0 // CHUNK
        g = stream(mc.seed, substream(lane, first_index + 2 * ci))
        gb = stream(mc.seed, substream(lane, first_index + 2 * ci + 1))
        jumps = sample_jump_batch(m.q, iota, t_cap, n, g)
        cur = _RegimeCursor(jumps, n)
        xs = np.tile(x, (n, 1))
        reg = np.full(n, iota, dtype=np.int64)
        alive = xs[:, 1] < b.eval_batch(reg, xs[:, 0])
        val = np.zeros(n)
        tau = np.where(alive, t_cap, 0.0)
        lam_int = np.zeros(n)
        lam_prev = lam[reg]
        f_prev = np.where(alive, eval_cost(m, reg, xs), 0.0)
        for k in range(n_steps):
            if not alive.any():
                break
            t1 = (k + 1) * mc.dt
            dw = g.standard_normal((n, 2)) * math.sqrt(mc.dt)
            xs, _ = _advance_step(coefs, xs, cur, k * mc.dt, t1, dw, gb)
            reg = cur.regime
            lam_cur = lam[reg]
            lam_int += (0.5 * mc.dt) * (lam_prev + lam_cur)
            lam_prev = lam_cur
            under = xs[:, 1] < b.eval_batch(reg, xs[:, 0])
            live = alive & under
            f = np.where(live, np.exp(-lam_int) * eval_cost(m, reg, xs), 0.0)
            val += (0.5 * mc.dt) * (f_prev + f)
            f_prev = f
            hit = alive & ~under
            if hit.any():
                tau[hit] = t1
            alive = live
        vals[c0:c0 + n] = val
        stopped[c0:c0 + n] = ~alive
        taus[c0:c0 + n] = tau
    return vals, stopped, taus


def _cap_horizon(m, iota, x, b, mc, lane=LANE_VALUE_STOPPED):
    """Cap for the stopped estimator: 10x the pilot mean stopping time."""
    t_pilot = _tail_horizon(m, b, mc)
    n_pilot = min(_PILOT_N, int(mc.n_paths))
    _, _, taus = _stopped_run(m, iota, x, b, mc, n_pilot, t_pilot,
                              lane, _PILOT_OFF)
    return max(10.0 * float(taus.mean()), 8.0 * mc.dt)


def estimate_value_stopped(m, iota, x, b, mc):
    """Expected discounted flow cost of running until the curve is crossed.

    Discounts with the integrated per-regime rate, so a constant rate is not
    required.  Raises when more than mc.max_unstopped of the paths are still
    running at the cap horizon: the rule does not reliably stop from this
    start and the estimate would be quietly truncated.
    """
    _require_a1(m)
    x = _check_start(x)
    n_total = int(mc.n_paths)
    if x[1] >= b(iota, x[0]):
        # start inside the stopping set: tau = 0
        return ValueEstimate(mean=0.0, std_error=0.0, n_paths=n_total,
                             unstopped_fraction=0.0)
    t_cap = _cap_horizon(m, iota, x, b, mc)
    vals, stopped, _ = _stopped_run(m, iota, x, b, mc, n_total, t_cap,
                                    LANE_VALUE_STOPPED, 0)
    unstopped = 1.0 - float(stopped.mean())
    if unstopped > mc.max_unstopped:
        raise SolverError(
            f"unstopped fraction {unstopped:.4g} exceeds max_unstopped "
            f"{mc.max_unstopped:g} at the cap horizon {t_cap:.4g}; the rule "
            "does not stop reliably from this start point")
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(n_total)) if n_total > 1 else 0.0
    lam_min = float(np.min(m.lam))
    tail = unstopped * _sup_abs_cost_under(m, b) * math.exp(-lam_min * t_cap) / lam_min
    return ValueEstimate(mean=mean, std_error=se, n_paths=n_total,
                         unstopped_fraction=unstopped, tail_bound=tail)


def estimate_value_free(m, iota, x, b, mc):
    """The same value through the un-stopped indicator representation.

    Thin wrapper over the estimator behind eval_G (identical output for
    identical arguments); requires a constant discount rate.
    """
    g = _free_integral(m, iota, x, b, mc)
    if g.truncation_horizon > 0.0:
        lam0 = float(m.lam[0])
        tail = _sup_abs_cost_under(m, b) * math.exp(-lam0 * g.truncation_horizon) / lam0
    else:
        tail = 0.0
    return ValueEstimate(mean=g.mean, std_error=g.std_error, n_paths=g.n_paths,
                         unstopped_fraction=0.0, tail_bound=tail)


def snell_martingale_check(m, iota, x, b, checkpoints, mc, n_outer=128,
                           n_inner=128, max_oracle_se=None):
    """Max drift of the stopped value process over the checkpoints, in
    combined-standard-error units.

    For each outer path the process at checkpoint t is the cost accrued to
    t ^ tau plus the discounted value at the state there (zero once stopped,
    otherwise a frozen-substream stopped-value estimate).  Checkpoint means
    are compared pairwise per path against t = 0, so the reported drift
    divides by the standard error of the paired differences.
    """
    _require_a1(m)
    x = _check_start(x)
    ts = np.atleast_1d(np.asarray(checkpoints, dtype=float))
    if ts.size == 0 or np.any(ts < 0):
        raise ValueError("checkpoints must be nonnegative times")
    if n_outer < 2:
        raise ValueError("n_outer must be at least 2")
    if x[1] >= b(iota, x[0]):
        # stopped at t = 0: the process is identically zero
        return 0.0
    # column 0 is the implicit t = 0 base every checkpoint is compared to
    ts = np.concatenate([[0.0], ts])
    steps = np.maximum(np.rint(ts / mc.dt).astype(int), 0)
    n_steps = int(steps.max())
    t_cap = _cap_horizon(m, iota, x, b, mc, lane=LANE_SNELL_OUTER)

    coefs = _Coefs(m)
    lam = np.asarray(m.lam, dtype=float)
    n_ck = ts.size

    acc = np.zeros((n_outer, n_ck))
    disc = np.ones((n_outer, n_ck))
    state = np.zeros((n_outer, n_ck, 2))
    state_reg = np.zeros((n_outer, n_ck), dtype=np.int64)
    alive_at = np.zeros((n_outer, n_ck), dtype=bool)

    for c0 in range(0, n_outer, CHUNK):
        n = min(CHUNK, n_outer - c0)
        ci = c0 // CHUNK
        g = stream(mc.seed, substream(LANE_SNELL_OUTER, 2 * ci))
        gb = stream(mc.seed, substream(LANE_SNELL_OUTER, 2 * ci + 1))
        horizon = max(n_steps, 1) * mc.dt
        jumps = sample_jump_batch(m.q, iota, horizon, n, g)
        cur = _RegimeCursor(jumps, n)
        xs = np.tile(x, (n, 1))
        reg = np.full(n, iota, dtype=np.int64)
        alive = np.ones(n, dtype=bool)
        val = np.zeros(n)
        lam_int = np.zeros(n)
        lam_prev = lam[reg]
        f_prev = eval_cost(m, reg, xs)

        def snapshot(k):
            for i in np.nonzero(steps == k)[0]:
                rows = slice(c0, c0 + n)
                acc[rows, i] = val
                disc[rows, i] = np.exp(-lam_int)
                state[rows, i] = xs
                state_reg[rows, i] = reg
                alive_at[rows, i] = alive

        snapshot(0)
        for k in range(n_steps):
            t1 = (k + 1) * mc.dt
            dw = g.standard_normal((n, 2)) * math.sqrt(mc.dt)
            xs, _ = _advance_step(coefs, xs, cur, k * mc.dt, t1, dw, gb)
            reg = cur.regime
            lam_cur = lam[reg]
            lam_int += (0.5 * mc.dt) * (lam_prev + lam_cur)
            lam_prev = lam_cur
            under = xs[:, 1] < b.eval_batch(reg, xs[:, 0])
            live = alive & under
            f = np.where(live, np.exp(-lam_int) * eval_cost(m, reg, xs), 0.0)
            val += (0.5 * mc.dt) * (f_prev + f)
            f_prev = f
            alive = live
            snapshot(k + 1)

    # frozen oracle bank: outer path p owns substream block 4p in the inner
    # lane, reused at every checkpoint so differences pair up
    mart = np.array(acc)
    oracle_ses = []
    for p in range(n_outer):
        for i in range(n_ck):
            if not alive_at[p, i]:
                continue
            v, _, _ = _stopped_run(m, int(state_reg[p, i]), state[p, i], b, mc,
                                   n_inner, t_cap, LANE_SNELL_INNER, 4 * p)
            mart[p, i] += disc[p, i] * float(v.mean())
            if n_inner > 1:
                oracle_ses.append(float(v.std(ddof=1) / math.sqrt(n_inner)))
    if max_oracle_se is not None and oracle_ses:
        floor = float(np.median(oracle_ses))
        if floor > max_oracle_se:
            raise SolverError(
                f"V-oracle noise floor {floor:.3e} exceeds the requested "
                f"{max_oracle_se:.3e}; increase n_inner")

    diffs = mart - mart[:, 0][:, None]
    worst = 0.0
    for i in range(1, n_ck):
        d = diffs[:, i]
        se = float(d.std(ddof=1) / math.sqrt(n_outer)) if n_outer > 1 else 0.0
        drift = abs(float(d.mean()))
        if se == 0.0:
            if drift > 0.0:
                raise SolverError("V-oracle noise floor is degenerate: paired "
                                  "differences have zero spread but nonzero drift")
            continue
        worst = max(worst, drift / se)
    return worst
