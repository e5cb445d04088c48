import numpy as np
import pytest

from wassmob.embedding import MobilityField, build_embedding
from wassmob.energy import EnergySpec, free_energy
from wassmob.errors import MissingMap, SizeExceeded
from wassmob.grid import Density, Grid
from wassmob.jko import (
    BoundCheck,
    JKOConfig,
    apriori_report,
    el_residual,
    exact_wa_squared,
    jko_step_entropic,
    jko_step_exact_small,
    run_jko,
    step_objective,
)
from wassmob.maps import map_1d_monotone
from wassmob.metric import cost_matrix

cp = pytest.importorskip("cvxpy")


def small_problem(n=12):
    g = Grid.line(0, 1, n)
    b = build_embedding(MobilityField.scalar_1d(lambda x: np.exp(2 * x), g))
    E = EnergySpec.quadratic_well(g, a=4.0, x0=0.6)
    rho = Density.from_function(g, lambda x: np.exp(-((x - 0.2) ** 2) / 0.02) + 0.01)
    return g, b, E, rho


def convex_oracle(rho, E, C, tau, eta):
    """Direct conic solve of the (entropic) step over couplings."""
    n = rho.grid.size
    w = rho.grid.weights
    P = cp.Variable((n, n), nonneg=True)
    q = cp.sum(P, axis=0)
    obj = cp.sum(cp.multiply(C, P)) / (2 * tau) - cp.sum(cp.entr(q)) - q @ np.log(w) + q @ E.psi
    if eta > 0:
        obj = obj - eta * cp.sum(cp.entr(P))
    prob = cp.Problem(cp.Minimize(obj), [cp.sum(P, axis=1) == rho.mass])
    prob.solve(solver="CLARABEL")
    return prob.value, q.value


def test_entropic_step_matches_conic_oracle():
    g, b, E, rho = small_problem()
    C = cost_matrix(b).c
    cfg = JKOConfig(tau=0.05, epsilon=2e-3)
    out, rep = jko_step_entropic(rho, E, b, cfg)
    val, q = convex_oracle(rho, E, C, cfg.tau, cfg.epsilon / (2 * cfg.tau))
    assert rep.converged
    assert rep.objective == pytest.approx(val, abs=1e-6)
    assert np.abs(out.mass - q).sum() < 1e-5


def test_exact_step_matches_conic_oracle():
    g, b, E, rho = small_problem()
    C = cost_matrix(b).c
    cfg = JKOConfig(tau=0.05, inner_solver="exact_small")
    out, rep, pi = jko_step_exact_small(rho, E, b, cfg, C)
    val, q = convex_oracle(rho, E, C, cfg.tau, 0.0)
    assert rep.converged and rep.kkt_residual <= cfg.kkt_tol
    assert rep.objective == pytest.approx(val, abs=1e-6)
    assert np.abs(out.mass - q).sum() < 1e-4
    # the exact objective evaluated independently
    assert step_objective(rho, out, E, b, cfg.tau) == pytest.approx(val, abs=1e-6)


def test_exact_step_size_limit():
    g = Grid.line(0, 1, 80)
    b = build_embedding(MobilityField.constant([[1.0]], g))
    with pytest.raises(SizeExceeded):
        jko_step_exact_small(Density.uniform(g), EnergySpec.zero(g), b, JKOConfig(inner_solver="exact_small"))


def test_newton_and_scaling_agree():
    g, b, E, rho = small_problem(40)
    outs = [jko_step_entropic(rho, E, b, JKOConfig(tau=1e-2, epsilon=1e-3, method=m, max_iter=5000))[0]
            for m in ("newton", "scaling")]
    assert outs[0].l1_distance(outs[1]) < 1e-10


def test_gibbs_is_nearly_fixed():
    g = Grid.line(0, 1, 64)
    b = build_embedding(MobilityField.scalar_1d(lambda x: np.exp(2 * x), g))
    E = EnergySpec.double_well(g, a=10.0)
    out, rep = jko_step_entropic(E.gibbs(), E, b, JKOConfig())
    assert rep.converged
    assert out.l1_distance(E.gibbs()) < 1e-3


def test_step_decreases_energy_up_to_slack():
    g, b, E, rho = small_problem(48)
    cfg = JKOConfig(tau=1e-2)
    out, rep = jko_step_entropic(rho, E, b, cfg)
    lhs = free_energy(out, E) + exact_wa_squared(rho, out, b) / (2 * cfg.tau)
    assert lhs <= free_energy(rho, E) + rep.slack + 1e-12
    assert abs(out.total_mass - 1) < 1e-12 and out.mass.min() >= 0


def test_default_epsilon_rule():
    C = np.array([[0.0, 4.0, 16.0], [4.0, 0.0, 4.0], [16.0, 4.0, 0.0]])
    assert JKOConfig(tau=1e-2).resolve_epsilon(C) == pytest.approx(4e-3)
    assert JKOConfig(tau=1e-4).resolve_epsilon(C) == pytest.approx(1e-4)
    assert JKOConfig(tau=10.0).resolve_epsilon(C) == pytest.approx(1e-2)
    with pytest.raises(ValueError):
        JKOConfig(tau=0.0)


def test_trajectory_and_apriori_ledger(tmp_path):
    g, b, E, rho = small_problem(48)
    traj = run_jko(rho, E, b, JKOConfig(tau=1e-2, n_steps=8))
    assert traj.error is None and len(traj.densities) == 9
    assert np.all(np.diff(traj.free_energy) <= np.array(traj.slacks) + 1e-12)
    assert apriori_report(traj).passed
    assert traj.at_time(0.035) is traj.densities[3]
    traj.export(tmp_path)
    assert (tmp_path / "step_00008.csv").exists() and (tmp_path / "ledger.json").exists()


def test_apriori_flags_energy_increase():
    g, b, E, rho = small_problem(24)
    traj = run_jko(rho, E, b, JKOConfig(tau=1e-2, n_steps=3))
    traj.free_energy[2] = traj.free_energy[0] + 1.0
    traj.slacks = [0.0] * len(traj.slacks)
    rep = apriori_report(traj)
    assert not rep.passed and "energy" in rep.violations
    assert BoundCheck("x", 1.0, 0.5, 0.1).excess == 0.5


def test_truncation_bound_on_heat_steps():
    g = Grid.line(0, 1, 64)
    A = MobilityField.constant([[1.0]], g)
    b = build_embedding(A)
    E = EnergySpec.zero(g)
    rho = Density.from_function(g, lambda x: np.exp(-((x - 0.35) ** 2) / 0.01) + 0.05)
    tau = 2e-3
    traj = run_jko(rho, E, b, JKOConfig(tau=tau, n_steps=5, epsilon=100 * tau**2))
    for k in range(5):
        p, q = traj.densities[k], traj.densities[k + 1]
        rep = el_residual(p, q, map_1d_monotone(p, q, b), E, b, tau, [(lambda z: z**2, 2.0)], A,
                          plan_cost=traj.transport_cost[k], eta=traj.epsilon / (2 * tau))
        assert rep.passed
    with pytest.raises(MissingMap):
        el_residual(p, q, None, E, b, tau, [], A)
