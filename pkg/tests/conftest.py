"""Shared model builders and solved reference objects for the test suite."""

import numpy as np
import pytest

from switchstop import (CostSpec, GeneratorMatrix, MCConfig, ModelSpec,
                        bracket_from_onedim, default_abscissae,
                        extract_boundary, make_grid, onedim,
                        resample_boundary, solve_integral_equation, solve_vi)

# quickest-detection reference parameters used throughout
LAM = 1.0
GAMMA = 0.5
C = 1.0
MU = (1.0, 2.0)
P_CHANNEL = (0.5, 0.5)
PI0 = 0.2


def detection_model(mu=MU, lam=LAM, gamma=GAMMA, c=C, p=P_CHANNEL, q_rates=None):
    """Stopping-problem coefficients induced by the detection statistics.

    Both sufficient statistics share drift lam + (lam+gamma)x and carry the
    regime's signal level mu(iota) as their volatility loading; the running
    cost trades detection delay against the false-alarm penalty lam/(c*gamma).
    """
    n = len(mu)
    if q_rates is None:
        q_rates = np.array([[-1.0, 1.0], [1.0, -1.0]])
    kappa = lam / (c * gamma)
    return ModelSpec(
        q=GeneratorMatrix(np.asarray(q_rates, dtype=float)),
        a=np.full((n, 2), lam),
        b=np.array([np.diag([lam + gamma, lam + gamma]) for _ in range(n)]),
        sigma=np.array([[m_, m_] for m_ in mu]),
        lam=np.full(n, lam),
        cost=CostSpec(kind="affine", p1=[p[0]] * n, p2=[p[1]] * n, kappa=[kappa] * n),
    )


@pytest.fixture(scope="session")
def acceptance_model():
    return detection_model()


# solved reference objects, shared session-wide because they are expensive


@pytest.fixture(scope="session")
def axis1(acceptance_model):
    return onedim.solve_axis_problem(acceptance_model, 1)


@pytest.fixture(scope="session")
def axis2(acceptance_model):
    return onedim.solve_axis_problem(acceptance_model, 2)


@pytest.fixture(scope="session")
def hjb_boundary(acceptance_model, axis1, axis2):
    grid = make_grid(axis1, axis2, n1=48, n2=48)
    field = solve_vi(acceptance_model, grid, axis1, axis2, n_cut=40.0)
    return field, extract_boundary(field)


@pytest.fixture(scope="session")
def ie_solution(acceptance_model, axis1, axis2, hjb_boundary):
    _, b_h = hjb_boundary
    x1 = default_abscissae(axis1, n=9)
    mc = MCConfig(n_paths=2048, dt=4e-3, seed=11)
    bracket = bracket_from_onedim(acceptance_model, axis1, axis2)
    b, log = solve_integral_equation(acceptance_model, resample_boundary(b_h, x1),
                                     mc, tol=0.08, bracket=bracket)
    return b, log, bracket
