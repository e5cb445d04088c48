import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wassmob.embedding import (
    MobilityField,
    build_embedding,
    build_embedding_1d,
    build_embedding_separable,
    export_embedding_csv,
    verify_embedding,
)
from wassmob.errors import AnchorMissing, NonPositiveMobility, NotDiagonal, NotSPD, UnsupportedMobility
from wassmob.grid import Grid


def test_exponential_friction_matches_closed_form():
    # B = exp(2x): b(x) = int_0^x e^t dt = e^x - 1
    g = Grid.line(0, 1, 129)
    b = build_embedding(MobilityField.scalar_1d(lambda x: np.exp(2 * x), g))
    assert np.abs(b.values[:, 0] - np.expm1(g.axes[0])).max() < 1e-9


def test_anchor_is_the_origin_when_present():
    g = Grid.line(-1, 1, 21)
    b = build_embedding_1d(lambda x: 1 + x**2, g)
    assert b.values[10, 0] == 0.0
    with pytest.raises(AnchorMissing):
        build_embedding_1d(np.ones(20), Grid.line(-1, 1, 20))


def test_constant_embedding_is_exact_and_upper_triangular():
    g = Grid.box([(0, 1), (0, 1)], (9, 9))
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    b = build_embedding(MobilityField.constant(A, g))
    M = b.matrix
    assert M[1, 0] == 0.0
    assert np.allclose(M.T @ M, np.linalg.inv(A), atol=1e-14)
    assert verify_embedding(b, MobilityField.constant(A, g)) <= 1e-12


def test_inverse_round_trip():
    g = Grid.line(0, 1, 65)
    b = build_embedding(MobilityField.scalar_1d(lambda x: 1 + 3 * x**2, g))
    x = np.linspace(0, 1, 17)
    assert np.allclose(np.ravel(b.inverse(np.interp(x, g.axes[0], b.values[:, 0]))), x, atol=1e-6)


def test_separable_components():
    g = Grid.box([(0, 1), (0, 1)], (17, 9))
    B = MobilityField.separable([lambda x: np.exp(2 * x), lambda y: 4.0 + 0 * y], g)
    b = build_embedding(B)
    y = g.coords[:, 1]
    assert np.allclose(b.values[:, 1], 2 * y, atol=1e-12)


def test_failures():
    g = Grid.line(0, 1, 8)
    with pytest.raises(NonPositiveMobility):
        MobilityField.scalar_1d(-np.ones(8), g)
    with pytest.raises(NotSPD):
        MobilityField.constant([[0.0]], g)
    g2 = Grid.box([(0, 1), (0, 1)], (4, 4))
    full = np.tile(np.array([[2.0, 0.3], [0.3, 1.0]]), (16, 1, 1))
    with pytest.raises(NotDiagonal):
        build_embedding_separable(full, g2)
    varying = full * (1 + g2.coords[:, :1, None])
    with pytest.raises(UnsupportedMobility):
        MobilityField.from_friction_matrices(g2, varying)


def test_csv_round_trip(tmp_path):
    g = Grid.line(0, 1, 11)
    rows = np.column_stack([g.axes[0], 1 + g.axes[0]])
    p = tmp_path / "B.csv"
    np.savetxt(p, rows, delimiter=",", header="x1,B11")
    A = MobilityField.from_csv(p, g)
    assert np.allclose(A.B[:, 0, 0], 1 + g.axes[0])
    export_embedding_csv(build_embedding(A), tmp_path / "b.csv")
    assert (tmp_path / "b.csv").read_text().startswith("x1,b1")


@given(st.floats(-3, 3), st.floats(0.2, 5))
def test_gram_residual_small_for_smooth_friction(rate, scale):
    g = Grid.line(0, 1, 129)
    B = MobilityField.scalar_1d(lambda x: scale * np.exp(rate * x), g)
    b = build_embedding(B)
    assert verify_embedding(b, B) <= 1e-3 * scale * np.exp(abs(rate))
    assert np.all(np.diff(b.values[:, 0]) > 0)
