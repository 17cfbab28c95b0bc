"""Tests for model containers, cost evaluation and assumption checks."""

import numpy as np
import pytest

from switchstop import (CostSpec, GeneratorMatrix, ModelSpec,
                        check_assumptions, cutoff_cost, eval_cost,
                        model_from_dict)


def two_regime_model(**overrides):
    """Baseline: the detection-style coefficients used across the test suite."""
    kw = dict(
        q=GeneratorMatrix(np.array([[-1.0, 1.0], [1.0, -1.0]])),
        a=np.full((2, 2), 1.0),
        b=np.array([np.diag([1.5, 1.5]), np.diag([1.5, 1.5])]),
        sigma=np.array([[1.0, 1.0], [2.0, 2.0]]),
        lam=np.array([1.0, 1.0]),
        cost=CostSpec(kind="affine", p1=[0.5, 0.5], p2=[0.5, 0.5], kappa=[2.0, 2.0]),
    )
    kw.update(overrides)
    return ModelSpec(**kw)


class TestContainers:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            two_regime_model(a=np.full((3, 2), 1.0))
        with pytest.raises(ValueError):
            two_regime_model(lam=np.array([1.0]))
        with pytest.raises(ValueError):
            two_regime_model(b=np.zeros((2, 2)))

    def test_cost_positivity(self):
        with pytest.raises(ValueError):
            CostSpec(kind="affine", p1=[0.5, 0.0], p2=[0.5, 0.5], kappa=[1.0, 1.0])

    def test_cost_kind_hook(self):
        with pytest.raises(NotImplementedError):
            CostSpec(kind="quadratic", p1=[1.0], p2=[1.0], kappa=[0.0])

    def test_round_trip(self):
        m = two_regime_model()
        m2 = model_from_dict(m.to_dict())
        np.testing.assert_array_equal(m2.q.rates, m.q.rates)
        np.testing.assert_array_equal(m2.b, m.b)
        np.testing.assert_array_equal(m2.cost.kappa, m.cost.kappa)

    def test_scalar_summaries(self):
        m = two_regime_model(lam=np.array([1.0, 2.0]),
                             cost=CostSpec("affine", [0.5, 0.5], [0.5, 0.5], [2.0, 3.0]))
        assert m.lambda_min == 1.0
        assert not m.lambda_is_constant
        assert m.h_floor == -3.0
        assert two_regime_model().lambda_is_constant


class TestCost:
    def test_affine_value(self):
        m = two_regime_model()
        assert eval_cost(m, 0, np.array([1.0, 2.0])) == pytest.approx(-0.5)

    def test_vectorized(self):
        m = two_regime_model()
        x = np.array([[0.0, 0.0], [4.0, 4.0], [8.0, 0.0]])
        np.testing.assert_allclose(eval_cost(m, 1, x), [-2.0, 2.0, 2.0])

    def test_negative_coordinate_raises(self):
        m = two_regime_model()
        with pytest.raises(ValueError, match="negative"):
            eval_cost(m, 0, np.array([-0.1, 1.0]))

    def test_cutoff(self):
        m = two_regime_model()
        assert cutoff_cost(m, 0, np.array([40.0, 40.0]), 10.0) == 10.0
        assert cutoff_cost(m, 0, np.array([1.0, 1.0]), 10.0) == pytest.approx(-1.0)
        with pytest.raises(ValueError):
            cutoff_cost(m, 0, np.array([1.0, 1.0]), 0.0)


class TestAssumptions:
    def test_clean_model_passes(self):
        report = check_assumptions(two_regime_model())
        assert report["ok"]
        assert report["a3"]["certified"]
        assert "certified" in report["a3"]["note"]

    def test_sign_violations_reported(self):
        m = two_regime_model(lam=np.array([1.0, -0.5]))
        report = check_assumptions(m)
        assert not report["a1"]["ok"]
        assert any("lambda" in p for p in report["a1"]["problems"])

        m = two_regime_model(sigma=np.array([[1.0, 0.0], [2.0, 2.0]]))
        assert not check_assumptions(m)["a1"]["ok"]

        bad_b = np.array([[[1.5, -0.1], [0.0, 1.5]], np.diag([1.5, 1.5])])
        assert not check_assumptions(two_regime_model(b=bad_b))["a1"]["ok"]

    def test_recurrence_not_certified_wording(self):
        # zero additive drift is admissible but falls outside the sufficient condition
        m = two_regime_model(a=np.array([[0.0, 1.0], [1.0, 1.0]]))
        report = check_assumptions(m)
        assert report["a1"]["ok"]
        assert not report["a3"]["certified"]
        assert report["a3"]["note"] == "A3 not certified"

    def test_negative_diagonal_drift_not_certified(self):
        b = np.array([[[-0.5, 0.0], [0.0, 1.5]], np.diag([1.5, 1.5])])
        report = check_assumptions(two_regime_model(b=b))
        assert report["a1"]["ok"]  # diagonal sign is unrestricted structurally
        assert report["a3"]["note"] == "A3 not certified"
