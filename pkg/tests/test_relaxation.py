import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wassmob.relaxation import (
    QuadraticSystem,
    damped_step,
    damped_trajectory,
    dissipation_audit,
    initial_state,
    minimizing_movement_step,
    movement_objective,
    power_balance,
    run_comparison,
    step_objective,
)


def scalar(eps=1.0, tau=0.1):
    return QuadraticSystem(np.eye(1), np.zeros(1), np.eye(1), eps, tau)


def test_fixed_point_at_rest():
    sys = QuadraticSystem.random(4, seed=1, epsilon=0.1)
    s = damped_step(sys, initial_state(sys, sys.equilibrium))
    assert np.allclose(s.y, sys.equilibrium, atol=1e-14) and np.allclose(s.v, 0, atol=1e-14)


def test_scalar_step_against_coupled_linear_solve():
    sys = scalar()
    s = damped_step(sys, initial_state(sys, [1.0], [0.0]))
    # unknowns (y, v): eps (v - v0)/tau + K y + B v = f,  v - (y - y0)/tau = 0
    M = np.array([[1.0, 1.0 / 0.1 + 1.0], [-1.0 / 0.1, 1.0]])
    y, v = np.linalg.solve(M, [0.0, -1.0 / 0.1])
    assert s.y[0] == pytest.approx(y, abs=1e-14)
    assert s.v[0] == pytest.approx(v, abs=1e-14)
    assert s.y[0] == pytest.approx(1 - 0.1 / 11.1, abs=1e-14)


def test_scalar_movement_closed_form():
    assert minimizing_movement_step(scalar(), [1.0])[0] == pytest.approx(1 / 1.1, abs=1e-15)


def test_equilibrium_is_kept_by_movement_step():
    sys = QuadraticSystem.random(6, seed=2)
    assert np.allclose(minimizing_movement_step(sys, sys.equilibrium), sys.equilibrium, atol=1e-12)


@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_damped_step_minimises_its_objective(seed, eps):
    rng = np.random.default_rng(seed)
    sys = QuadraticSystem.random(5, seed=rng, epsilon=eps, tau=0.05)
    s0 = initial_state(sys, rng.standard_normal(5), rng.standard_normal(5))
    s1 = damped_step(sys, s0)
    best = step_objective(sys, s0.y, s0.v, s1.y)
    for _ in range(20):
        assert step_objective(sys, s0.y, s0.v, s1.y + 1e-3 * rng.standard_normal(5)) >= best - 1e-12
    # first-order condition of the objective
    v = s1.v
    grad = eps * (v - s0.v) / sys.tau + sys.gradient(s1.y) + sys.Bfric @ v
    assert np.abs(grad).max() < 1e-9 * max(1.0, np.abs(sys.gradient(s1.y)).max())


@given(st.integers(0, 10_000))
def test_movement_step_decreases_objective(seed):
    rng = np.random.default_rng(seed)
    sys = QuadraticSystem.random(5, seed=rng, tau=0.1)
    y0 = rng.standard_normal(5)
    y1 = minimizing_movement_step(sys, y0)
    assert movement_objective(sys, y0, y1) <= sys.energy(y0) + 1e-12


def test_zero_mass_coincides_with_movement():
    sys = QuadraticSystem.random(10, seed=3, tau=1e-2)
    y0 = np.ones(10)
    rep = run_comparison(sys, y0, np.zeros(10), 1.0, [0.0])
    assert rep.full_gaps[0] < 1e-12


@given(st.integers(0, 1000), st.sampled_from([0.0, 1e-3, 0.1, 1.0]))
def test_total_energy_never_increases(seed, eps):
    rng = np.random.default_rng(seed)
    sys = QuadraticSystem.random(6, seed=rng, epsilon=eps, tau=0.05)
    traj = damped_trajectory(sys, rng.standard_normal(6), rng.standard_normal(6), 40)
    E = np.array([s.total_energy for s in traj])
    assert np.all(np.diff(E) <= 1e-12 * max(1.0, np.abs(E).max()))


def test_balance_identity_and_margins():
    sys = QuadraticSystem.random(10, seed=5, epsilon=1e-2, tau=1e-3)
    y0 = np.linspace(-1, 1, 10)
    audit = dissipation_audit(sys, damped_trajectory(sys, y0, sys.slow_velocity(y0), 500), n_samples=200)
    assert audit.passed
    assert audit.balance_identity_error < 1e-12
    assert audit.trajectory_equality < 1e-12
    assert audit.margin_identity_error < 1e-10
    assert audit.min_margin > 0


def test_power_balance_at_rest():
    sys = QuadraticSystem.random(3, seed=0, epsilon=0.5)
    rate, bound = power_balance(sys, sys.equilibrium, np.zeros(3), np.zeros(3))
    assert rate == 0.0 and bound == pytest.approx(0.0, abs=1e-25)


def test_windowed_gap_monotone_in_eps():
    sys = QuadraticSystem.random(10, seed=11, tau=1e-3)
    rep = run_comparison(sys, np.ones(10), np.zeros(10), 1.5, [1e-1, 1e-2, 1e-3, 1e-4])
    assert rep.monotone
    assert rep.to_json()["window_gaps"][-1] < 1e-2


def test_rejects_indefinite():
    with pytest.raises(ValueError):
        QuadraticSystem(-np.eye(2), np.zeros(2), np.eye(2))
    with pytest.raises(ValueError):
        QuadraticSystem(np.eye(2), np.zeros(2), np.eye(2), epsilon=-1.0)
