import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wassmob.embedding import MobilityField
from wassmob.energy import EnergySpec, chemical_potential, entropy, free_energy
from wassmob.errors import UnsupportedAnisotropy
from wassmob.fpref import (
    assemble_operator,
    bernoulli,
    heat_series,
    implicit_euler_step,
    run_reference,
    weak_form_residual,
)
from wassmob.grid import Density, Grid


def test_bernoulli_identity():
    x = np.linspace(-30, 30, 121)
    assert np.allclose(bernoulli(-x), np.exp(x) * bernoulli(x), rtol=1e-12)
    assert bernoulli(0.0) == 1.0


def test_entropy_of_uniform_is_zero():
    g = Grid.line(0, 1, 17)
    assert entropy(Density.uniform(g)) == pytest.approx(0.0, abs=1e-15)


def test_gibbs_minimises_free_energy():
    g = Grid.line(0, 1, 64)
    E = EnergySpec.double_well(g, a=10.0)
    gibbs = E.gibbs()
    # F(Gibbs) = -log Z
    assert free_energy(gibbs, E) == pytest.approx(-E.log_partition, abs=1e-12)
    mu = chemical_potential(gibbs, E)
    assert np.ptp(mu) < 1e-12
    other = gibbs.mix(Density.uniform(g), 0.3)
    assert free_energy(other, E) > free_energy(gibbs, E)


@given(st.floats(0.1, 20), st.floats(-2, 2), st.integers(0, 1000))
def test_operator_is_mass_conserving_m_matrix(a, rate, seed):
    rng = np.random.default_rng(seed)
    g = Grid.line(0, 1, 24)
    A = MobilityField.scalar_1d(lambda x: np.exp(rate * x), g)
    E = EnergySpec.from_values(g, a * rng.random(24))
    L = assemble_operator(A, E).L.toarray()
    assert np.abs(L.sum(axis=0)).max() < 1e-9 * np.abs(L).max()
    off = L - np.diag(np.diag(L))
    assert off.min() >= 0
    # Gibbs state is in the kernel
    assert np.abs(L @ E.gibbs().mass).max() < 1e-10 * np.abs(L).max()


def test_gibbs_fixed_point_2d():
    g = Grid.box([(0, 1), (0, 1)], (12, 10))
    A = MobilityField.separable([lambda x: 1 + x, lambda y: np.exp(y)], g)
    E = EnergySpec.quadratic_well(g, a=3.0)
    op = assemble_operator(A, E)
    assert implicit_euler_step(op, E.gibbs(), 0.05).l1_distance(E.gibbs()) < 1e-12
    assert np.abs(op.L.toarray().sum(axis=0)).max() < 1e-10


def test_full_tensor_2d_rejected():
    g = Grid.box([(0, 1), (0, 1)], (4, 4))
    with pytest.raises(UnsupportedAnisotropy):
        assemble_operator(MobilityField.constant([[2.0, 0.5], [0.5, 1.0]], g), EnergySpec.zero(g))


def test_heat_against_cosine_series():
    f0 = lambda x: np.exp(-((x - 0.35) ** 2) / 0.01) + 0.05  # noqa: E731
    errs = []
    for n in (33, 65, 129):
        g = Grid.line(0, 1, n)
        A = MobilityField.constant([[1.0]], g)
        rho0 = Density.from_function(g, f0)
        tr = run_reference(A, EnergySpec.zero(g), rho0, 1e-4, 0.02)
        exact = heat_series(f0, g.axes[0], 0.02)
        exact /= np.sum(exact * g.weights)
        errs.append(np.sum(np.abs(tr.final.values - exact) * g.weights))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 2e-3


def test_trajectory_properties():
    g = Grid.line(0, 1, 64)
    A = MobilityField.scalar_1d(lambda x: np.exp(2 * x), g)
    E = EnergySpec.double_well(g, a=20.0)
    rho0 = Density.from_function(g, lambda x: np.exp(-((x - 0.3) ** 2) / 0.005))
    tr = run_reference(A, E, rho0, 1e-3, 0.2)
    assert np.all(np.diff(tr.free_energy) <= 1e-13)
    assert all(abs(r.total_mass - 1) < 1e-12 and r.mass.min() >= 0 for r in tr.densities)


def test_weak_form_residual_vanishes_to_first_order():
    g = Grid.line(0, 1, 64)
    A = MobilityField.constant([[1.0]], g)
    E = EnergySpec.quadratic_well(g, a=2.0)
    op = assemble_operator(A, E)
    rho0 = Density.from_function(g, lambda x: 1 + x)

    def test_fn(x, t):
        return np.cos(np.pi * x[:, 0]) * (1 + t)

    test_fn.dt = lambda x, t: np.cos(np.pi * x[:, 0])
    res = []
    for dt in (1e-2, 5e-3):
        tr = run_reference(A, E, rho0, dt, 0.1, op=op)
        res.append(abs(weak_form_residual(tr.densities, op, test_fn, dt)))
    assert res[1] <= 0.6 * res[0]
    assert res[1] >= 0.4 * res[0]


def test_triplet_dump(tmp_path):
    g = Grid.line(0, 1, 5)
    op = assemble_operator(MobilityField.constant([[1.0]], g), EnergySpec.zero(g))
    op.to_triplets(tmp_path / "L.txt")
    lines = (tmp_path / "L.txt").read_text().splitlines()
    assert lines[0] == f"# 5 5 {op.L.nnz}"
