"""Tests for path simulation: exactness properties, an ODE mean oracle,
coupled ordering, discounting, and batch weak convergence."""

import io
import math

import numpy as np
import pytest

from switchstop import CostSpec, GeneratorMatrix, ModelSpec, simulate
from switchstop.rng import stream

from conftest import detection_model

E15 = math.exp(1.5)
# scalar mean ODE m' = lam + (lam+gamma) m, m(0) = 1, at t = 1
MEAN_ORACLE = (1.0 + 1.0 / 1.5) * E15 - 1.0 / 1.5


def flat_model(a=(1.0, 1.0), sigma=((1.0, 1.0), (1.0, 1.0)), lam=(1.0, 1.0), b=None):
    """Two-regime model with zero generator (no switching)."""
    if b is None:
        b = np.zeros((2, 2, 2))
    return ModelSpec(
        q=GeneratorMatrix(np.zeros((2, 2))),
        a=np.array([a, a], dtype=float),
        b=np.asarray(b, dtype=float),
        sigma=np.asarray(sigma, dtype=float),
        lam=np.asarray(lam, dtype=float),
        cost=CostSpec("affine", [0.5, 0.5], [0.5, 0.5], [2.0, 2.0]),
    )


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            simulate.PathConfig(dt=0.0, horizon=1.0, seed=1)
        with pytest.raises(ValueError):
            simulate.PathConfig(dt=2.0, horizon=1.0, seed=1)


class TestSimulatePath:
    def test_deterministic_drift_is_exact(self):
        # sigma = 0 bypasses the coefficient gate; Euler integrates a constant
        # drift with no error, so X_2 = (2, 2) exactly
        m = flat_model(sigma=((0.0, 0.0), (0.0, 0.0)))
        cfg = simulate.PathConfig(dt=0.01, horizon=2.0, seed=5)
        path = simulate.simulate_path(m, 0, (0.0, 0.0), cfg, validate=False)
        np.testing.assert_allclose(path.x[-1], [2.0, 2.0], rtol=1e-12)
        assert path.clamp_count == 0

    def test_origin_absorbing_without_intercept(self):
        m = flat_model(a=(0.0, 0.0))
        cfg = simulate.PathConfig(dt=0.01, horizon=1.0, seed=5)
        path = simulate.simulate_path(m, 0, (0.0, 0.0), cfg)
        assert np.all(path.x == 0.0)

    def test_gate_rejects_degenerate_volatility(self):
        m = flat_model(sigma=((0.0, 1.0), (1.0, 1.0)))
        cfg = simulate.PathConfig(dt=0.01, horizon=1.0, seed=5)
        with pytest.raises(ValueError, match="sigma"):
            simulate.simulate_path(m, 0, (1.0, 1.0), cfg)

    def test_negative_start_rejected(self):
        cfg = simulate.PathConfig(dt=0.01, horizon=1.0, seed=5)
        with pytest.raises(ValueError):
            simulate.simulate_path(detection_model(), 0, (-1.0, 1.0), cfg)

    def test_determinism_and_substream_separation(self):
        m = detection_model()
        cfg = simulate.PathConfig(dt=0.01, horizon=1.0, seed=11, substream=3)
        p1 = simulate.simulate_path(m, 0, (1.0, 1.0), cfg)
        p2 = simulate.simulate_path(m, 0, (1.0, 1.0), cfg)
        np.testing.assert_array_equal(p1.x, p2.x)
        p3 = simulate.simulate_path(
            m, 0, (1.0, 1.0), simulate.PathConfig(dt=0.01, horizon=1.0, seed=11, substream=4))
        assert not np.array_equal(p1.x, p3.x)

    def test_lambda_exact_under_constant_rate(self):
        # constant lambda: the integral is t itself no matter where jumps fall
        m = detection_model()
        cfg = simulate.PathConfig(dt=0.2, horizon=5.0, seed=9)
        path = simulate.simulate_path(m, 0, (1.0, 1.0), cfg)
        assert path.regimes.max() == 1  # switching actually happened
        np.testing.assert_allclose(path.lam_integral, path.times, rtol=1e-12)

    def test_lambda_piecewise_two_rates(self):
        m = detection_model()
        m2 = ModelSpec(q=m.q, a=m.a, b=m.b, sigma=m.sigma,
                       lam=np.array([1.0, 2.0]), cost=m.cost)
        cfg = simulate.PathConfig(dt=0.2, horizon=5.0, seed=9)
        path = simulate.simulate_path(m2, 0, (1.0, 1.0), cfg)
        segs = np.diff(path.times)
        time_in_1 = segs[path.regimes[:-1] == 1].sum()
        np.testing.assert_allclose(path.lam_integral[-1], 5.0 + time_in_1, rtol=1e-12)


class TestCoupled:
    def test_equal_starts_identical(self):
        m = detection_model()
        cfg = simulate.PathConfig(dt=0.01, horizon=2.0, seed=13)
        lo, hi = simulate.simulate_coupled(m, 0, (1.0, 1.0), (1.0, 1.0), cfg)
        np.testing.assert_array_equal(lo.x, hi.x)
        np.testing.assert_array_equal(lo.times, hi.times)

    def test_ordering_preserved(self):
        m = detection_model()
        for sub in range(20):
            cfg = simulate.PathConfig(dt=0.005, horizon=2.0, seed=17, substream=sub)
            lo, hi = simulate.simulate_coupled(m, 0, (0.5, 0.5), (1.0, 1.0), cfg)
            assert np.all(lo.x <= hi.x)

    def test_second_coordinate_offset_ordered(self):
        m = detection_model()
        cfg = simulate.PathConfig(dt=0.005, horizon=2.0, seed=19)
        lo, hi = simulate.simulate_coupled(m, 0, (1.0, 1.0), (1.0, 2.0), cfg)
        assert np.all(lo.x[:, 1] <= hi.x[:, 1])
        assert np.all(lo.x[:, 0] <= hi.x[:, 0])  # b is diagonal: equality holds

    def test_bad_order_rejected(self):
        cfg = simulate.PathConfig(dt=0.01, horizon=1.0, seed=1)
        with pytest.raises(ValueError):
            simulate.simulate_coupled(detection_model(), 0, (2.0, 1.0), (1.0, 1.0), cfg)


class TestDiscount:
    def test_values(self):
        m = detection_model()
        cfg = simulate.PathConfig(dt=0.25, horizon=1.0, seed=3)
        path = simulate.simulate_path(m, 0, (1.0, 1.0), cfg)
        assert simulate.discount_at(path, 0.0) == 1.0
        np.testing.assert_allclose(simulate.discount_at(path, 1.0), math.exp(-1.0),
                                   rtol=1e-12)

    def test_hand_built_two_rate_path(self):
        path = simulate.SamplePath(
            times=np.array([0.0, 0.5, 1.0]), regimes=np.array([0, 1, 1]),
            x=np.ones((3, 2)), lam_integral=np.array([0.0, 0.5, 1.5]), clamp_count=0)
        np.testing.assert_allclose(simulate.discount_at(path, 1.0), math.exp(-1.5))

    def test_off_grid_rejected(self):
        path = simulate.SamplePath(
            times=np.array([0.0, 1.0]), regimes=np.array([0, 0]),
            x=np.ones((2, 2)), lam_integral=np.array([0.0, 1.0]), clamp_count=0)
        with pytest.raises(ValueError, match="grid"):
            simulate.discount_at(path, 0.3)


class TestCsv:
    def test_round_trippable_dump(self):
        m = detection_model()
        cfg = simulate.PathConfig(dt=0.25, horizon=1.0, seed=3)
        path = simulate.simulate_path(m, 0, (1.0, 1.0), cfg)
        buf = io.StringIO()
        simulate.dump_csv(path, buf, comments=("config_hash=abc",))
        lines = buf.getvalue().splitlines()
        assert lines[0] == "# config_hash=abc"
        assert lines[1] == "t,regime,x1,x2,Lambda"
        body = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:]])
        np.testing.assert_allclose(body[:, 0], path.times, rtol=0, atol=0)
        np.testing.assert_allclose(body[:, 2:4], path.x, rtol=0, atol=0)


class TestJumpBatch:
    def test_counts_match_poisson_moments(self):
        q = GeneratorMatrix(np.array([[-1.0, 1.0], [1.0, -1.0]]))
        batch = simulate.sample_jump_batch(q, 0, 2.0, 20000, stream(31, 1))
        # unit-rate two-state chain: jump count over [0, 2] is Poisson(2)
        mean = batch.n_jumps.mean()
        se = batch.n_jumps.std(ddof=1) / np.sqrt(batch.n_jumps.size)
        assert abs(mean - 2.0) < 3 * se
        # padding: +inf strictly beyond each path's last jump
        rows = np.arange(batch.n_jumps.size)
        assert np.all(batch.times[rows, batch.n_jumps] == np.inf)
        # two states alternate deterministically
        k = batch.n_jumps[0]
        np.testing.assert_array_equal(batch.states_after[0, :k],
                                      (np.arange(k) + 1) % 2)

    def test_absorbing_generator_gives_no_jumps(self):
        q = GeneratorMatrix(np.zeros((2, 2)))
        batch = simulate.sample_jump_batch(q, 1, 5.0, 100, stream(31, 2))
        assert np.all(batch.n_jumps == 0)
        assert np.all(np.isinf(batch.times))


@pytest.fixture(scope="module")
def paired_batch():
    """10^5 paired paths of the switching model at dt 1e-3 vs 2e-3, t_end 1."""
    m = detection_model()
    return simulate.batch_terminal_state(m, 0, (0.25, 0.25), 1.0, 1e-3, 100_000,
                                         seed=2024, paired=True)


class TestBatch:
    def test_mean_matches_scalar_ode(self):
        """No switching (Q = 0): E X^1_t solves m' = lam + (lam+gamma) m exactly,
        so the 1e5-path mean at t = 1 must sit within 3 standard errors of m(1)."""
        m = detection_model(q_rates=np.zeros((2, 2)))
        out = simulate.batch_terminal_state(m, 0, (1.0, 1.0), 1.0, 1e-3, 100_000,
                                            seed=77)
        x1 = out["x"][:, 0]
        se = x1.std(ddof=1) / np.sqrt(x1.size)
        assert abs(x1.mean() - MEAN_ORACLE) < 3 * se

    def test_determinism(self):
        m = detection_model()
        a = simulate.batch_terminal_state(m, 0, (1.0, 1.0), 0.2, 1e-2, 2000, seed=5)
        b = simulate.batch_terminal_state(m, 0, (1.0, 1.0), 0.2, 1e-2, 2000, seed=5)
        np.testing.assert_array_equal(a["x"], b["x"])

    def test_weak_convergence_under_refinement(self, paired_batch):
        # same increments, halved dt: the mean shift is discretization bias alone
        # and must stay below one standard error of the coarse estimate
        x_fine = paired_batch["x"][:, 0]
        x_coarse = paired_batch["x_coarse"][:, 0]
        se_coarse = x_coarse.std(ddof=1) / np.sqrt(x_coarse.size)
        assert abs(x_fine.mean() - x_coarse.mean()) < se_coarse

    def test_clamp_rate_small(self, paired_batch):
        assert paired_batch["clamp_count"] / paired_batch["step_count"] < 1e-3
