import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wassmob.errors import GridMismatch
from wassmob.grid import Density, Grid


def test_weights_sum_to_volume():
    g = Grid.box([(0, 2), (-1, 1)], (5, 7))
    assert g.weights.sum() == pytest.approx(4.0, abs=1e-14)
    assert Grid.line(0, 1, 11).weights[[0, -1]] == pytest.approx([0.05, 0.05])


def test_node_order_is_row_major():
    g = Grid.box([(0, 1), (0, 1)], (3, 4))
    assert np.allclose(g.coords[1], [0.0, 1 / 3])
    assert g.node_index([0.5, 1.0]) == 1 * 4 + 3


def test_density_round_trip_and_mass():
    g = Grid.line(0, 1, 9)
    r = Density.from_values(g, np.ones(9))
    assert np.allclose(r.values, 1.0)
    assert r.total_mass == pytest.approx(1.0, abs=1e-15)


def test_density_rejects_bad_mass():
    g = Grid.line(0, 1, 4)
    with pytest.raises(ValueError):
        Density(g, [0.5, 0.5, 0.5, -0.5])
    with pytest.raises(ValueError):
        Density(g, [0.2, 0.2, 0.2, 0.2])


def test_grid_mismatch():
    with pytest.raises(GridMismatch):
        Density.uniform(Grid.line(0, 1, 4)).l1_distance(Density.uniform(Grid.line(0, 1, 5)))


@given(st.lists(st.floats(0.0, 10.0), min_size=6, max_size=6).filter(lambda v: sum(v) > 1e-3), st.floats(0, 1))
def test_mix_stays_a_density(vals, s):
    g = Grid.line(0, 1, 6)
    a = Density.from_mass(g, vals)
    m = a.mix(Density.uniform(g), s)
    assert m.total_mass == pytest.approx(1.0, abs=1e-12)
    assert np.all(m.mass >= 0)
