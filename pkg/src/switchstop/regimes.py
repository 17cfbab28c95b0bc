"""Continuous-time Markov chain regimes: generator matrices and exact path sampling."""

from dataclasses import dataclass, field

import numpy as np

_ROWSUM_TOL = 1e-12


def validate_generator(q):
    """Check a square matrix for generator structure, report-style.

    Returns a dict with keys ``ok`` (bool) and ``problems`` (list of human-readable
    strings).  Does not raise: callers that want hard failure construct a
    GeneratorMatrix instead.
    """
    q = np.asarray(q, dtype=float)
    problems = []
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        problems.append(f"not a square matrix: shape {q.shape}")
        return {"ok": False, "problems": problems}
    if q.shape[0] < 1:
        problems.append("empty matrix")
    if not np.all(np.isfinite(q)):
        problems.append("non-finite entries")
    off = q.copy()
    np.fill_diagonal(off, 0.0)
    if np.any(off < 0):
        i, j = np.argwhere(off < 0)[0]
        problems.append(f"negative off-diagonal rate q[{i},{j}] = {q[i, j]}")
    rowsum = q.sum(axis=1)
    if np.any(np.abs(rowsum) > _ROWSUM_TOL):
        i = int(np.argmax(np.abs(rowsum)))
        problems.append(f"row {i} sums to {rowsum[i]:.3e}, not 0 within {_ROWSUM_TOL}")
    return {"ok": not problems, "problems": problems}


@dataclass(frozen=True)
class GeneratorMatrix:
    """Generator of a finite-state CTMC: off-diagonal rates >= 0, rows sum to 0."""

    rates: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rates, dtype=float)
        object.__setattr__(self, "rates", q)
        report = validate_generator(q)
        if not report["ok"]:
            raise ValueError("invalid generator: " + "; ".join(report["problems"]))

    @property
    def n(self):
        return self.rates.shape[0]

    def exit_rate(self, state):
        """Total jump rate out of a state (-q_ii)."""
        return -self.rates[state, state]


@dataclass(frozen=True)
class RegimePath:
    """One CTMC trajectory on [0, horizon], stored as jump times and post-jump states.

    The path is cadlag: the state at a jump time is the new state.  Jump times are
    strictly increasing, lie in (0, horizon], and consecutive states differ.
    """

    initial_state: int
    jump_times: np.ndarray
    jump_states: np.ndarray
    horizon: float

    def __post_init__(self):
        t = np.asarray(self.jump_times, dtype=float)
        s = np.asarray(self.jump_states, dtype=np.int64)
        object.__setattr__(self, "jump_times", t)
        object.__setattr__(self, "jump_states", s)
        if t.shape != s.shape or t.ndim != 1:
            raise ValueError("jump_times and jump_states must be 1-d and same length")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if t.size:
            if t[0] <= 0 or t[-1] > self.horizon:
                raise ValueError("jump times must lie in (0, horizon]")
            if np.any(np.diff(t) <= 0):
                raise ValueError("jump times must be strictly increasing")
            states = np.concatenate(([self.initial_state], s))
            if np.any(states[1:] == states[:-1]):
                raise ValueError("consecutive states must differ at a jump")

    @property
    def n_jumps(self):
        return self.jump_times.size

    def state_at(self, t):
        """State at time t (cadlag).  t may be a scalar or an array in [0, horizon]."""
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0) or np.any(t_arr > self.horizon):
            raise ValueError("time outside [0, horizon]")
        # side='right': at a jump time the new state is already in force
        idx = np.searchsorted(self.jump_times, t_arr, side="right")
        states = np.concatenate(([self.initial_state], self.jump_states))
        out = states[idx]
        return out if t_arr.ndim else int(out)


def regime_at(path, t):
    """Cadlag state of a RegimePath at time t; error outside [0, horizon]."""
    return path.state_at(t)


def sample_regime_path(generator, initial_state, horizon, rng):
    """Sample a CTMC path exactly: exponential holding times plus the embedded chain.

    In state i the holding time is Exp(-q_ii); the next state is j with probability
    q_ij / (-q_ii).  A state with -q_ii = 0 is absorbing and the path stays there.
    """
    q = generator.rates
    n = generator.n
    if not 0 <= initial_state < n:
        raise ValueError(f"initial_state {initial_state} out of range for {n} regimes")
    if horizon <= 0:
        raise ValueError("horizon must be positive")

    times, states = [], []
    t = 0.0
    state = int(initial_state)
    while True:
        rate = -q[state, state]
        if rate <= 0.0:
            break
        t += rng.exponential(1.0 / rate)
        if t > horizon:
            break
        probs = q[state].copy()
        probs[state] = 0.0
        probs /= rate
        state = int(rng.choice(n, p=probs))
        times.append(t)
        states.append(state)
    return RegimePath(initial_state=int(initial_state),
                      jump_times=np.array(times, dtype=float),
                      jump_states=np.array(states, dtype=np.int64),
                      horizon=float(horizon))
