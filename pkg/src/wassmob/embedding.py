"""Mobility fields and isometric embeddings ``b`` with ``(grad b)^T grad b = B``.

Only three families admit a computable embedding at desk scale:

* ``constant``: ``b(x) = M x`` with ``M`` upper triangular and ``M^T M = A^{-1}``;
* ``scalar_1d``: ``b(x) = int_0^x sqrt(B(s)) ds``;
* ``separable_diagonal``: componentwise 1D embeddings of ``B_ii = beta_i(x_i)``.

Anything else raises :class:`UnsupportedMobility`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import PchipInterpolator

from .errors import (
    AnchorMissing,
    GridMismatch,
    NonPositiveMobility,
    NotDiagonal,
    NotInvertible,
    NotSPD,
    UnsupportedMobility,
)
from .grid import Grid

FAMILIES = ("constant", "scalar_1d", "separable_diagonal")
SPD_TOL = 1e-10
INVERSE_TOL = 1e-12
DIAG_TOL = 1e-14


def _min_eig_sym(M):
    """Smallest eigenvalue of symmetric 1x1 / 2x2 blocks, closed form, vectorised."""
    M = np.asarray(M, dtype=float)
    if M.shape[-1] == 1:
        return M[..., 0, 0]
    a, b, d = M[..., 0, 0], 0.5 * (M[..., 0, 1] + M[..., 1, 0]), M[..., 1, 1]
    return 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + b**2)


def check_spd(M, tol=SPD_TOL):
    M = np.asarray(M, dtype=float)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2] or M.shape[-1] not in (1, 2):
        raise NotSPD(f"expected 1x1 or 2x2 matrices, got shape {M.shape}")
    asym = np.abs(M - np.swapaxes(M, -1, -2)).max()
    if asym > tol:
        raise NotSPD(f"matrix not symmetric (defect {asym:.2e})")
    lam = _min_eig_sym(M)
    if np.min(lam) <= tol:
        raise NotSPD(f"smallest eigenvalue {np.min(lam):.3e} not positive")
    return lam


def _samples(grid_axis, source):
    if callable(source):
        vals = np.asarray(source(grid_axis), dtype=float)
        return np.broadcast_to(vals, grid_axis.shape).copy()
    vals = np.asarray(source, dtype=float)
    if vals.ndim == 0:
        return np.full(grid_axis.shape, float(vals))
    if vals.shape != grid_axis.shape:
        raise GridMismatch(f"{vals.shape[0]} samples for {grid_axis.shape[0]} nodes")
    return vals


@dataclass(frozen=True, eq=False)
class MobilityField:
    grid: Grid
    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    c0: float
    family_tag: str
    axis_friction: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.family_tag not in FAMILIES:
            raise UnsupportedMobility(f"unknown family {self.family_tag!r}")
        defect = np.abs(np.einsum("nij,njk->nik", self.A, self.B) - np.eye(self.grid.dim)).max()
        if defect > INVERSE_TOL:
            raise NotSPD(f"A*B deviates from identity by {defect:.2e}")

    @classmethod
    def _from_B(cls, grid, B, family, axis_friction=None):
        B = np.asarray(B, dtype=float)
        lam = check_spd(B)
        A = np.linalg.inv(B)
        return cls(grid, A, B, float(lam.min()), family, axis_friction)

    @classmethod
    def constant(cls, A, grid):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape != (grid.dim, grid.dim):
            raise GridMismatch(f"A has shape {A.shape} on a {grid.dim}D grid")
        check_spd(A)
        B = np.linalg.inv(A)
        B = 0.5 * (B + B.T)
        return cls._from_B(grid, np.broadcast_to(B, (grid.size, grid.dim, grid.dim)).copy(), "constant")

    @classmethod
    def scalar_1d(cls, B, grid):
        """Friction ``B(x)`` given as a callable or node samples on a 1D grid."""
        if grid.dim != 1:
            raise UnsupportedMobility("scalar_1d needs a 1D grid")
        vals = _samples(grid.axes[0], B)
        if np.any(vals <= 0):
            raise NonPositiveMobility(f"friction sample {vals.min():.3e} is not positive")
        return cls._from_B(grid, vals[:, None, None], "scalar_1d", (vals,))

    @classmethod
    def separable(cls, betas, grid):
        """Diagonal friction ``B_ii(x) = beta_i(x_i)``, one callable/array per axis."""
        if len(betas) != grid.dim:
            raise GridMismatch("need one friction profile per axis")
        per_axis = []
        for ax, beta in zip(grid.axes, betas):
            vals = _samples(ax, beta)
            if np.any(vals <= 0):
                raise NonPositiveMobility(f"friction sample {vals.min():.3e} is not positive")
            per_axis.append(vals)
        mesh = np.meshgrid(*per_axis, indexing="ij")
        B = np.zeros((grid.size, grid.dim, grid.dim))
        for i, m in enumerate(mesh):
            B[:, i, i] = m.ravel()
        return cls._from_B(grid, B, "separable_diagonal", tuple(per_axis))

    @classmethod
    def from_friction_matrices(cls, grid, B):
        """Classify per-node friction matrices into a supported family."""
        B = np.asarray(B, dtype=float).reshape(grid.size, grid.dim, grid.dim)
        check_spd(B)
        if grid.dim == 1:
            return cls.scalar_1d(B[:, 0, 0], grid)
        if np.abs(B - B[0]).max() <= DIAG_TOL * max(1.0, np.abs(B).max()):
            return cls.constant(np.linalg.inv(B[0]), grid)
        if np.abs(B[:, 0, 1]).max() > DIAG_TOL or np.abs(B[:, 1, 0]).max() > DIAG_TOL:
            raise UnsupportedMobility("non-constant full-tensor friction has no computable embedding")
        b11 = B[:, 0, 0].reshape(grid.n)
        b22 = B[:, 1, 1].reshape(grid.n)
        if np.ptp(b11, axis=1).max() > 1e-12 or np.ptp(b22, axis=0).max() > 1e-12:
            raise UnsupportedMobility("diagonal friction is not separable")
        return cls.separable([b11[:, 0], b22[0, :]], grid)

    @classmethod
    def from_csv(cls, path, grid):
        """Rows: ``x_1..x_d, B_11..B_dd`` (row-major); must follow the grid node order."""
        rows = _read_numeric_csv(path)
        d = grid.dim
        if rows.shape != (grid.size, d + d * d):
            raise GridMismatch(f"mobility CSV has shape {rows.shape}, expected {(grid.size, d + d * d)}")
        if np.abs(rows[:, :d] - grid.coords).max() > 1e-9:
            raise GridMismatch("mobility CSV coordinates do not match the grid")
        return cls.from_friction_matrices(grid, rows[:, d:])

    def scalar_A(self):
        if self.grid.dim != 1:
            raise UnsupportedMobility("scalar mobility only exists in 1D")
        return self.A[:, 0, 0]


def _read_numeric_csv(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    try:
        return np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError:
        # header line
        return np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)


@dataclass(eq=False)
class EmbeddingMap:
    grid: Grid
    q: int
    values: np.ndarray = field(repr=False)
    family: str
    anchor_index: int
    inverse_1d: PchipInterpolator | None = field(default=None, repr=False)
    matrix: np.ndarray | None = field(default=None, repr=False)
    shift: float = 0.0
    gram_residual: float | None = None

    @property
    def invertible(self):
        return self.inverse_1d is not None or self.matrix is not None

    @property
    def is_linear(self):
        return self.matrix is not None

    def inverse(self, z):
        """Map embedded points back to ``x``; shape ``(..., q) -> (..., d)``."""
        z = np.asarray(z, dtype=float)
        if self.inverse_1d is not None:
            z1 = z[..., 0] if z.ndim and z.shape[-1:] == (1,) else z
            return np.asarray(self.inverse_1d(z1))[..., None]
        if self.matrix is not None:
            return np.linalg.solve(self.matrix, z.reshape(-1, self.q).T).T.reshape(z.shape[:-1] + (self.grid.dim,))
        raise NotInvertible(f"no inverse available for the {self.family} embedding")

    def line_values(self):
        if self.grid.dim != 1:
            raise NotInvertible("embedded line values only exist for 1D grids")
        return self.values[:, 0]


def _cumulative_root(samples, h, anchor):
    root = np.sqrt(samples)
    cum = cumulative_simpson(root, dx=h, initial=0.0)
    return cum - cum[anchor]


def _axis_anchor(axis, anchor=None):
    if anchor is not None:
        if not 0 <= anchor < axis.size:
            raise AnchorMissing(f"anchor node {anchor} outside the grid")
        return int(anchor)
    hits = np.flatnonzero(np.isclose(axis, 0.0, rtol=0.0, atol=1e-12))
    if hits.size:
        return int(hits[0])
    if axis[0] < 0.0 < axis[-1]:
        raise AnchorMissing("origin lies inside the box but is not a node; declare an anchor")
    return 0


def build_embedding_1d(B, grid, anchor=None):
    """Embedding ``b(x) = int_anchor^x sqrt(B)`` by cumulative Simpson on the nodes."""
    if grid.dim != 1:
        raise UnsupportedMobility("build_embedding_1d needs a 1D grid")
    if isinstance(B, MobilityField):
        B = B.B[:, 0, 0]
    vals = _samples(grid.axes[0], B)
    if np.any(vals <= 0):
        raise NonPositiveMobility(f"friction sample {vals.min():.3e} is not positive")
    x = grid.axes[0]
    k = _axis_anchor(x, anchor)
    b = _cumulative_root(vals, grid.h[0], k)
    if np.any(np.diff(b) <= 0):
        raise NotInvertible("quadrature produced a non-increasing embedding")
    return EmbeddingMap(
        grid=grid,
        q=1,
        values=b[:, None],
        family="scalar_1d",
        anchor_index=k,
        inverse_1d=PchipInterpolator(b, x, extrapolate=False),
        shift=float(x[k]),
    )


def build_embedding_constant(A, grid):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    check_spd(A)
    if A.shape != (grid.dim, grid.dim):
        raise GridMismatch(f"A has shape {A.shape} on a {grid.dim}D grid")
    B = np.linalg.inv(A)
    B = 0.5 * (B + B.T)
    M = np.linalg.cholesky(B).T  # upper triangular, M^T M = B
    vals = grid.coords @ M.T
    anchor = grid.node_index(np.zeros(grid.dim))
    emb = EmbeddingMap(
        grid=grid,
        q=grid.dim,
        values=vals,
        family="constant",
        anchor_index=-1 if anchor is None else anchor,
        matrix=M,
    )
    if grid.dim == 1:
        emb.inverse_1d = PchipInterpolator(vals[:, 0], grid.axes[0], extrapolate=False)
    return emb


def build_embedding_separable(B, grid, anchors=None):
    """``B`` is a separable :class:`MobilityField`, per-node matrices, or per-axis profiles."""
    if isinstance(B, MobilityField):
        if B.family_tag != "separable_diagonal":
            raise UnsupportedMobility(f"{B.family_tag} field passed to the separable builder")
        profiles = B.axis_friction
    elif isinstance(B, (list, tuple)):
        profiles = [_samples(ax, beta) for ax, beta in zip(grid.axes, B)]
    else:
        M = np.asarray(B, dtype=float).reshape(grid.size, grid.dim, grid.dim)
        off = M - np.einsum("nii->ni", M)[..., None] * np.eye(grid.dim)
        if np.abs(off).max() > DIAG_TOL:
            raise NotDiagonal(f"off-diagonal friction entry {np.abs(off).max():.2e}")
        field_ = MobilityField.from_friction_matrices(grid, M)
        return build_embedding_separable(field_, grid, anchors)
    anchors = anchors or [None] * grid.dim
    comps, idx = [], []
    for ax, prof, hk, anc in zip(grid.axes, profiles, grid.h, anchors):
        prof = np.asarray(prof, dtype=float)
        if np.any(prof <= 0):
            raise NonPositiveMobility(f"friction sample {prof.min():.3e} is not positive")
        k = _axis_anchor(ax, anc)
        comps.append(_cumulative_root(prof, hk, k))
        idx.append(k)
    mesh = np.meshgrid(*comps, indexing="ij")
    vals = np.stack([m.ravel() for m in mesh], axis=1)
    emb = EmbeddingMap(
        grid=grid,
        q=grid.dim,
        values=vals,
        family="separable_diagonal",
        anchor_index=int(np.ravel_multi_index(idx, grid.n)),
    )
    if grid.dim == 1:
        emb.inverse_1d = PchipInterpolator(vals[:, 0], grid.axes[0], extrapolate=False)
    return emb


def build_embedding(mobility: MobilityField, anchor=None):
    """Dispatch on the mobility family."""
    tag = mobility.family_tag
    if tag == "constant":
        return build_embedding_constant(mobility.A[0], mobility.grid)
    if tag == "scalar_1d":
        return build_embedding_1d(mobility.B[:, 0, 0], mobility.grid, anchor=anchor)
    if tag == "separable_diagonal":
        return build_embedding_separable(mobility, mobility.grid)
    raise UnsupportedMobility(tag)


def jacobian_fd(b: EmbeddingMap):
    """Central-difference Jacobian on interior nodes: ``(interior_idx, J[k, q, d])``."""
    g = b.grid
    vals = b.values.reshape(g.n + (b.q,))
    if g.dim == 1:
        J = (vals[2:] - vals[:-2]) / (2 * g.h[0])
        return np.arange(1, g.n[0] - 1), J[:, :, None]
    d1 = (vals[2:, 1:-1] - vals[:-2, 1:-1]) / (2 * g.h[0])
    d2 = (vals[1:-1, 2:] - vals[1:-1, :-2]) / (2 * g.h[1])
    J = np.stack([d1, d2], axis=-1).reshape(-1, b.q, 2)
    ii, jj = np.meshgrid(np.arange(1, g.n[0] - 1), np.arange(1, g.n[1] - 1), indexing="ij")
    return np.ravel_multi_index((ii.ravel(), jj.ravel()), g.n), J


def verify_embedding(b: EmbeddingMap, B: MobilityField, h=None):
    """Max-norm defect of ``(D_h b)^T (D_h b) - B`` over interior nodes; stored on ``b``."""
    b.grid.check_same(B.grid)
    if h is not None and not np.allclose(h, b.grid.h):
        raise GridMismatch(f"spacing {h} does not match grid spacing {b.grid.h}")
    idx, J = jacobian_fd(b)
    gram = np.einsum("kqi,kqj->kij", J, J)
    res = float(np.abs(gram - B.B[idx]).max()) if idx.size else 0.0
    b.gram_residual = res
    return res


def export_embedding_csv(b: EmbeddingMap, path):
    d = b.grid.dim
    header = [f"x{i + 1}" for i in range(d)] + [f"b{k + 1}" for k in range(b.q)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for x, v in zip(b.grid.coords, b.values):
            w.writerow([repr(float(t)) for t in (*x, *v)])
