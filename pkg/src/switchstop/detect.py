"""Bayesian quickest detection of a regime-switching coordinate drift.

The observable is a two-dimensional Brownian path where one coordinate,
chosen at random, picks up a regime-dependent drift mu(alpha) at a hidden
change time theta.  The detector tracks one weighted likelihood-ratio
statistic per candidate coordinate, (Phi, Psi), and raises an alarm the
first time Psi crosses a per-regime boundary evaluated at Phi.  The risk
of a rule is measured two ways: directly, by scoring false alarms and
exponentially penalized delay on scenarios simulated under the physical
measure, and indirectly through the stopped discounted-cost form of the
equivalent stopping problem.  The two must agree, so the pair doubles as
an end-to-end consistency check of the whole solve chain.
"""

import math
from dataclasses import dataclass

import numpy as np

from .model import CostSpec, ModelSpec
from .onedim import SolverError
from .regimes import GeneratorMatrix
from .simulate import MCConfig, _RegimeCursor, sample_jump_batch
from .value import estimate_value_stopped


@dataclass(frozen=True)
class DetectionConfig:
    """Ingredients of the detection problem under the physical measure.

    pi is the prior mass of an immediate change, lam the exponential rate
    of the change time, gamma the delay penalty exponent in
    F(t) = e^{gamma t} - 1, and c the weight of the delay term.  mu gives
    the post-change drift magnitude per regime; a zero entry makes that
    regime's observations uninformative, which keeps the filter well
    defined but is rejected by the solvers downstream.
    """

    pi: float
    lam: float
    gamma: float
    c: float
    mu: tuple
    p1: float
    p2: float
    q: GeneratorMatrix
    iota0: int = 0

    def __post_init__(self):
        if not 0.0 <= self.pi < 1.0:
            raise ValueError("pi must lie in [0, 1)")
        for name in ("lam", "gamma", "c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not isinstance(self.q, GeneratorMatrix):
            raise ValueError("q must be a GeneratorMatrix")
        mu = tuple(float(v) for v in np.atleast_1d(self.mu))
        if len(mu) != self.q.n or any(v < 0 or not math.isfinite(v) for v in mu):
            raise ValueError("mu must give one finite drift >= 0 per regime")
        object.__setattr__(self, "mu", mu)
        if self.p1 < 0 or self.p2 < 0 or abs(self.p1 + self.p2 - 1.0) > 1e-12:
            raise ValueError("p1 and p2 must be nonnegative and sum to 1")
        if not 0 <= int(self.iota0) < self.q.n:
            raise ValueError("iota0 out of range")

    @property
    def prior_odds(self):
        return self.pi / (1.0 - self.pi)


@dataclass(frozen=True)
class SufficientStats:
    """Filter state after processing observations up to time t.

    logL1 and logL2 accumulate the per-coordinate log likelihood ratios;
    Phi and Psi are the delay-weighted odds statistics the alarm rule
    reads.  Both start at the prior odds pi/(1-pi) at t = 0.
    """

    t: float
    regime: int
    logL1: float
    logL2: float
    Phi: float
    Psi: float

    def __post_init__(self):
        vals = (self.t, self.logL1, self.logL2, self.Phi, self.Psi)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("statistics must be finite")
        if self.t < 0 or self.Phi < 0 or self.Psi < 0:
            raise ValueError("t, Phi, Psi must be nonnegative")


def initial_stats(cfg):
    """Filter state at t = 0: unit likelihoods, both statistics at the prior odds."""
    r0 = cfg.prior_odds
    return SufficientStats(t=0.0, regime=int(cfg.iota0), logL1=0.0, logL2=0.0,
                           Phi=r0, Psi=r0)


@dataclass(frozen=True)
class Scenario:
    """One realized observation stream plus its hidden truth when known.

    Row k covers the step ending at t[k], with t[-1] read as 0: regime[k]
    is the chain state driving that step and dx1, dx2 are the coordinate
    increments over it.  Streams replayed from disk carry theta = None and
    beta = None; the detector never reads either.
    """

    theta: float | None
    beta: int | None
    t: np.ndarray
    regime: np.ndarray
    dx1: np.ndarray
    dx2: np.ndarray

    def __post_init__(self):
        if self.theta is not None and not self.theta >= 0:
            raise ValueError("theta must be >= 0")
        if self.beta is not None and self.beta not in (1, 2):
            raise ValueError("beta must be 1 or 2")
        t = np.asarray(self.t, dtype=float)
        reg = np.asarray(self.regime, dtype=np.int64)
        dx1 = np.asarray(self.dx1, dtype=float)
        dx2 = np.asarray(self.dx2, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise ValueError("observation stream must be nonempty")
        if t[0] <= 0 or np.any(np.diff(t) <= 0):
            raise ValueError("step end times must be positive and increasing")
        if not (reg.shape == dx1.shape == dx2.shape == t.shape):
            raise ValueError("stream columns must share one length")
        if np.any(reg < 0):
            raise ValueError("regime indices must be >= 0")
        if not (np.all(np.isfinite(dx1)) and np.all(np.isfinite(dx2))):
            raise ValueError("increments must be finite")
        for name, v in (("t", t), ("regime", reg), ("dx1", dx1), ("dx2", dx2)):
            object.__setattr__(self, name, v)

    @property
    def n_steps(self):
        return self.t.size

    @property
    def observations(self):
        """(k, 4) array with columns t, dx1, dx2, regime."""
        return np.column_stack([self.t, self.dx1, self.dx2,
                                self.regime.astype(float)])


def to_osp_model(cfg):
    """Stopping-problem coefficients describing the statistics (Phi, Psi).

    Each statistic drifts at lam + (lam + gamma) x, loads the regime's
    signal level mu(iota) as volatility on both coordinates, discounts at
    the constant rate lam, and pays the affine running cost
    p1 x1 + p2 x2 - lam/(c gamma).
    """
    n = cfg.q.n
    kappa = cfg.lam / (cfg.c * cfg.gamma)
    mu = np.asarray(cfg.mu, dtype=float)
    return ModelSpec(
        q=cfg.q,
        a=np.full((n, 2), cfg.lam),
        b=np.tile(np.diag([cfg.lam + cfg.gamma] * 2), (n, 1, 1)),
        sigma=np.repeat(mu[:, None], 2, axis=1),
        lam=np.full(n, cfg.lam),
        cost=CostSpec(kind="affine", p1=np.full(n, cfg.p1),
                      p2=np.full(n, cfg.p2), kappa=np.full(n, kappa)),
    )


# ---------------------------------------------------------------------------
# filtering


def _filter_step(mu_r, lam, gamma, phi, psi, dx1, dx2, dt):
    """Advance the statistics by one observation step, elementwise.

    The update multiplies by the per-step likelihood ratio and growth
    factor, then adds the trapezoid weight of the fresh-change inflow.
    Only ratios of the likelihood appear, so nothing overflows even when
    the accumulated L would.
    """
    half = 0.5 * mu_r * mu_r * dt
    dlog1 = mu_r * dx1 - half
    dlog2 = mu_r * dx2 - half
    grow = np.exp((lam + gamma) * dt)
    r1 = np.exp(dlog1) * grow
    r2 = np.exp(dlog2) * grow
    gain = 0.5 * lam * dt
    return (dlog1, dlog2,
            r1 * phi + gain * (r1 + 1.0),
            r2 * psi + gain * (r2 + 1.0))


def update_stats(cfg, s, regime, dx, dt):
    """Fold one observation increment into the filter state."""
    if not dt > 0 or not math.isfinite(dt):
        raise ValueError("dt must be positive and finite")
    regime = int(regime)
    if not 0 <= regime < cfg.q.n:
        raise ValueError("regime out of range")
    dx1, dx2 = float(dx[0]), float(dx[1])
    if not (math.isfinite(dx1) and math.isfinite(dx2)):
        raise ValueError("increments must be finite")
    dlog1, dlog2, phi, psi = _filter_step(cfg.mu[regime], cfg.lam, cfg.gamma,
                                          s.Phi, s.Psi, dx1, dx2, dt)
    return SufficientStats(t=s.t + dt, regime=regime,
                           logL1=s.logL1 + float(dlog1),
                           logL2=s.logL2 + float(dlog2),
                           Phi=float(phi), Psi=float(psi))


# ---------------------------------------------------------------------------
# scenario generation under the physical measure


def _sample_hidden(cfg, n, rng):
    """Change times (atom at 0, else exponential) and drifted-coordinate draws."""
    u = rng.random(n)
    expo = rng.exponential(1.0 / cfg.lam, n)
    theta = np.where(u < cfg.pi, 0.0, expo)
    beta = np.where(rng.random(n) < cfg.p1, 1, 2).astype(np.int64)
    return theta, beta


def _step_edges(horizon, dt):
    k = int(np.ceil(horizon / dt - 1e-12))
    edges = np.minimum((np.arange(k) + 1) * dt, horizon)
    edges[-1] = horizon
    return edges


def simulate_scenario(cfg, horizon, dt, rng):
    """Draw hidden truth and one observation stream up to the horizon.

    The drift contribution of the step straddling theta uses the exact
    overlap of the step with [theta, inf), the regime is frozen at its
    left-edge value, and the Brownian part is a plain sqrt(step) Gaussian.
    rng may be a seed or a Generator.
    """
    if not horizon > 0 or not 0 < dt <= horizon:
        raise ValueError("need horizon > 0 and 0 < dt <= horizon")
    rng = np.random.default_rng(rng)
    theta, beta = _sample_hidden(cfg, 1, rng)
    jumps = sample_jump_batch(cfg.q, int(cfg.iota0), horizon, 1, rng)
    cursor = _RegimeCursor(jumps, 1)
    edges = _step_edges(horizon, dt)
    mu = np.asarray(cfg.mu, dtype=float)
    rows = np.zeros(1, dtype=np.int64)
    regs = np.empty(edges.size, dtype=np.int64)
    dx1 = np.empty(edges.size)
    dx2 = np.empty(edges.size)
    t0 = 0.0
    for k, t1 in enumerate(edges):
        cursor.advance_through(rows, t0)
        reg = int(cursor.regime[0])
        step = t1 - t0
        z = rng.standard_normal(2)
        on = min(max(t1 - float(theta[0]), 0.0), step)
        sig = mu[reg] * on
        root = math.sqrt(step)
        dx1[k] = (sig if beta[0] == 1 else 0.0) + root * z[0]
        dx2[k] = (sig if beta[0] == 2 else 0.0) + root * z[1]
        regs[k] = reg
        t0 = t1
    return Scenario(theta=float(theta[0]), beta=int(beta[0]), t=edges,
                    regime=regs, dx1=dx1, dx2=dx2)


# ---------------------------------------------------------------------------
# the alarm rule


@dataclass(frozen=True)
class StatsTrace:
    """Filter path sampled at the observation edges; row 0 is t = 0."""

    t: np.ndarray
    regime: np.ndarray
    Phi: np.ndarray
    Psi: np.ndarray


def run_detector(cfg, b, scenario):
    """Replay a stream through the filter and apply the alarm rule.

    Returns (tau, trace) where tau is the first edge time with
    Psi >= b_regime(Phi), or None when the rule never fires within the
    stream.  The rule is checked at t = 0 before any data, so a zero
    boundary alarms immediately.
    """
    if int(scenario.regime.max()) >= cfg.q.n:
        raise ValueError("scenario regime indices exceed the model")
    s = initial_stats(cfg)
    ts = [0.0]
    rg = [int(cfg.iota0)]
    ph = [s.Phi]
    ps = [s.Psi]
    tau = None
    if s.Psi >= b(int(cfg.iota0), s.Phi):
        tau = 0.0
    else:
        t0 = 0.0
        for k in range(scenario.n_steps):
            t1 = float(scenario.t[k])
            reg = int(scenario.regime[k])
            s = update_stats(cfg, s, reg,
                             (scenario.dx1[k], scenario.dx2[k]), t1 - t0)
            ts.append(t1)
            rg.append(reg)
            ph.append(s.Phi)
            ps.append(s.Psi)
            if s.Psi >= b(reg, s.Phi):
                tau = t1
                break
            t0 = t1
    trace = StatsTrace(t=np.asarray(ts), regime=np.asarray(rg, dtype=np.int64),
                       Phi=np.asarray(ph), Psi=np.asarray(ps))
    return tau, trace


def alarm_record(tau, trace):
    """JSON-ready summary of a detector run at its final row."""
    return {"tau": None if tau is None else float(tau),
            "Phi": float(trace.Phi[-1]),
            "Psi": float(trace.Psi[-1]),
            "regime": int(trace.regime[-1])}


# ---------------------------------------------------------------------------
# risk under the physical measure


def evaluate_policy(cfg, b, n_paths, rng, *, horizon=20.0, dt=1e-2,
                    max_unstopped=0.01, detail=False):
    """Score an alarm rule on fresh scenarios under the physical measure.

    Scenario randomness is drawn in a fixed order that does not depend on
    the rule, so two calls seeded alike score different boundaries on
    identical scenarios and the difference of their risks is a paired
    estimate.  Paths that never alarm are censored at the horizon: they
    count no false alarm and only the delay accrued so far, which biases
    the risk low, so the report flags itself as a lower bound whenever any
    path is censored.  Raises when the censored fraction exceeds
    max_unstopped.
    """
    if not horizon > 0 or not 0 < dt <= horizon:
        raise ValueError("need horizon > 0 and 0 < dt <= horizon")
    n = int(n_paths)
    if n < 1:
        raise ValueError("n_paths must be at least 1")
    rng = np.random.default_rng(rng)
    theta, beta = _sample_hidden(cfg, n, rng)
    jumps = sample_jump_batch(cfg.q, int(cfg.iota0), horizon, n, rng)
    cursor = _RegimeCursor(jumps, n)
    edges = _step_edges(horizon, dt)
    mu = np.asarray(cfg.mu, dtype=float)
    r0 = cfg.prior_odds
    phi = np.full(n, r0)
    psi = np.full(n, r0)
    tau = np.full(n, np.inf)
    rows = np.arange(n)
    fired = psi >= b.eval_batch(np.full(n, int(cfg.iota0), dtype=np.int64), phi)
    tau[fired] = 0.0
    alive = ~fired
    t0 = 0.0
    for t1 in edges:
        if not alive.any():
            break
        cursor.advance_through(rows, t0)
        reg = cursor.regime
        step = t1 - t0
        z = rng.standard_normal((n, 2))
        on = np.clip(t1 - theta, 0.0, step)
        sig = mu[reg] * on
        root = math.sqrt(step)
        dx1 = np.where(beta == 1, sig, 0.0) + root * z[:, 0]
        dx2 = np.where(beta == 2, sig, 0.0) + root * z[:, 1]
        _, _, phi, psi = _filter_step(mu[reg], cfg.lam, cfg.gamma,
                                      phi, psi, dx1, dx2, step)
        hit = alive & (psi >= b.eval_batch(reg, phi))
        tau[hit] = t1
        alive &= ~hit
        t0 = t1

    unstopped = float(np.mean(np.isinf(tau)))
    if unstopped > max_unstopped:
        raise SolverError(
            f"unstopped fraction {unstopped:.4g} exceeds max_unstopped "
            f"{max_unstopped:.4g}; the rule does not alarm reliably within "
            f"horizon {horizon:g}")
    tau_eff = np.where(np.isfinite(tau), tau, horizon)
    fa = (tau < theta).astype(float)
    lag = np.maximum(tau_eff - theta, 0.0)
    delay = np.where(tau_eff > theta, np.expm1(cfg.gamma * lag), 0.0)
    j = fa + cfg.c * delay

    def se(arr):
        return float(arr.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan

    report = {
        "false_alarm": float(fa.mean()),
        "false_alarm_se": se(fa),
        "delay_penalty": float(cfg.c * delay.mean()),
        "delay_penalty_se": cfg.c * se(delay),
        "risk": float(j.mean()),
        "risk_se": se(j),
        "unstopped_fraction": unstopped,
        "censored": bool(unstopped > 0),
        "risk_is_lower_bound": bool(unstopped > 0),
        "n_scenarios": n,
        "horizon": float(horizon),
        "dt": float(dt),
    }
    if detail:
        report["paths"] = {"tau": tau, "theta": theta, "beta": beta, "risk": j}
    return report


def risk_via_statistics(cfg, b, n_paths, rng, *, dt=1e-3, max_unstopped=0.01,
                        tail_eps=1e-3):
    """Risk of a rule through the stopped-cost form of the statistics.

    Simulates (alpha, Phi, Psi) from the prior odds, stops at the rule,
    and maps the discounted running cost back to the detection risk.  rng
    may be a seed or a Generator; the paired-stream engine underneath is
    keyed by an integer, so a Generator is only used to draw one.
    """
    if isinstance(rng, (int, np.integer)):
        seed = int(rng)
    else:
        seed = int(np.random.default_rng(rng).integers(0, 2**63 - 1))
    mc = MCConfig(n_paths=int(n_paths), dt=dt, seed=seed, tail_eps=tail_eps,
                  max_unstopped=max_unstopped)
    r0 = cfg.prior_odds
    v = estimate_value_stopped(to_osp_model(cfg), int(cfg.iota0),
                               np.array([r0, r0]), b, mc)
    scale = (1.0 - cfg.pi) * cfg.c * cfg.gamma
    return {
        "risk": float(1.0 - cfg.pi + scale * v.mean),
        "risk_se": float(scale * v.std_error),
        "value_hat": float(v.mean),
        "value_hat_se": float(v.std_error),
        "unstopped_fraction": float(v.unstopped_fraction),
        "tail_bound": float(scale * v.tail_bound),
        "n_paths": int(v.n_paths),
    }


# ---------------------------------------------------------------------------
# diagnostics and persistence


def posterior_path(cfg, scenario):
    """Posterior probability that the drift is already active, per edge.

    Replays the stream with the delay tilt removed, which turns the two
    statistics into plain posterior odds contributions.  Diagnostic only;
    the alarm rule reads (Phi, Psi, regime) and never this.
    """
    if int(scenario.regime.max()) >= cfg.q.n:
        raise ValueError("scenario regime indices exceed the model")
    r0 = cfg.prior_odds
    phi, psi = r0, r0
    out = np.empty(scenario.n_steps + 1)
    out[0] = cfg.pi
    t0 = 0.0
    for k in range(scenario.n_steps):
        t1 = float(scenario.t[k])
        mu_r = cfg.mu[int(scenario.regime[k])]
        _, _, phi, psi = _filter_step(mu_r, cfg.lam, 0.0, phi, psi,
                                      float(scenario.dx1[k]),
                                      float(scenario.dx2[k]), t1 - t0)
        odds = cfg.p1 * phi + cfg.p2 * psi
        out[k + 1] = odds / (1.0 + odds)
        t0 = t1
    return np.concatenate([[0.0], scenario.t]), out


def write_scenario_csv(path, scenario):
    """Persist the observable stream; hidden truth is not written."""
    data = np.column_stack([scenario.t, scenario.regime.astype(float),
                            scenario.dx1, scenario.dx2])
    np.savetxt(path, data, fmt=["%.17g", "%d", "%.17g", "%.17g"],
               delimiter=",", header="t,regime,dx1,dx2", comments="")


def read_scenario_csv(path):
    """Load a replay stream written by write_scenario_csv."""
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if raw.shape[1] != 4:
        raise ValueError("expected columns t, regime, dx1, dx2")
    return Scenario(theta=None, beta=None, t=raw[:, 0],
                    regime=raw[:, 1].astype(np.int64),
                    dx1=raw[:, 2], dx2=raw[:, 3])
