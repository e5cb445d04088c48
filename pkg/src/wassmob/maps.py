"""Transport maps extracted from couplings and checks of their optimality.

Averaging always happens in embedded coordinates: the optimal map is a
gradient of a convex function only after conjugating with ``b``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingMap, MobilityField, jacobian_fd
from .errors import DimensionMismatch, EmptyRow, MissingDuals
from .grid import Density
from .metric import Coupling, _check_marginals, deposit, quantile_plan

SUPPORT_THRESHOLD = 1e-12
CYCLE_SEED = 20240601


@dataclass(eq=False)
class TransportMap:
    source: Density = field(repr=False)
    embedded_image: np.ndarray = field(repr=False)
    image: np.ndarray | None = field(repr=False)
    defined: np.ndarray = field(repr=False)
    plan: tuple | None = field(default=None, repr=False)

    @property
    def grid(self):
        return self.source.grid


def _images(b: EmbeddingMap, embedded, defined):
    if not b.invertible:
        return None
    x = np.full((embedded.shape[0], b.grid.dim), np.nan)
    if defined.any():
        x[defined] = np.asarray(b.inverse(embedded[defined])).reshape(-1, b.grid.dim)
    return x


def _barycentric(i, j, m, b, n):
    mass = np.bincount(i, weights=m, minlength=n)
    emb = np.zeros((n, b.q))
    for k in range(b.q):
        emb[:, k] = np.bincount(i, weights=m * b.values[j, k], minlength=n)
    defined = mass > 0
    emb[defined] /= mass[defined, None]
    emb[~defined] = np.nan
    return emb, defined


def map_from_coupling(coupling: Coupling, b: EmbeddingMap, strict=False) -> TransportMap:
    """Barycentric projection ``sum_j pi_ij b(x_j) / sum_j pi_ij``.

    Source nodes without mass carry ``nan`` and ``defined=False``; with
    ``strict=True`` they raise :class:`EmptyRow` instead.
    """
    i, j, m = coupling.atoms()
    emb, defined = _barycentric(i, j, m, b, b.grid.size)
    if strict and not defined.all():
        raise EmptyRow(f"{int((~defined).sum())} source nodes carry no mass")
    return TransportMap(coupling.row_marginal, emb, _images(b, emb, defined), defined, (i, j, m))


def map_1d_monotone(rho0: Density, rho1: Density, b: EmbeddingMap) -> TransportMap:
    """Monotone rearrangement of ``b#rho0`` onto ``b#rho1``, pulled back by ``b``."""
    if b.grid.dim != 1:
        raise DimensionMismatch("the monotone rearrangement needs a 1D grid")
    _check_marginals(rho0, rho1)
    i, j, m = quantile_plan(rho0.mass, rho1.mass)
    emb, defined = _barycentric(i, j, m, b, b.grid.size)
    return TransportMap(rho0, emb, _images(b, emb, defined), defined, (i, j, m))


def map_cost(tmap: TransportMap, b: EmbeddingMap):
    """Transport cost of the map; uses the underlying plan when it splits mass."""
    if tmap.plan is not None:
        i, j, m = tmap.plan
        return float(np.sum(m * np.sum((b.values[i] - b.values[j]) ** 2, axis=1)))
    d = tmap.defined
    diff = tmap.embedded_image[d] - b.values[d]
    return float(np.sum(tmap.source.mass[d] * np.sum(diff**2, axis=1)))


def push_forward(tmap: TransportMap, b: EmbeddingMap | None = None) -> Density:
    """Image measure; exact on the plan atoms when a plan is stored."""
    g = tmap.grid
    if tmap.plan is not None:
        _, j, m = tmap.plan
        return Density.from_mass(g, np.bincount(j, weights=m, minlength=g.size))
    d = tmap.defined
    return Density.from_mass(g, deposit(g, tmap.image[d], tmap.source.mass[d]))


def pushforward_defect(tmap: TransportMap, target: Density, fn):
    """``|sum f(r(x_i)) rho0_i - sum f(y_j) rho1_j|`` for a test function ``f``."""
    d = tmap.defined
    x = tmap.image[d]
    lhs = float(np.sum(fn(x[:, 0] if x.shape[1] == 1 else x) * tmap.source.mass[d]))
    y = target.grid.coords
    rhs = float(np.sum(fn(y[:, 0] if y.shape[1] == 1 else y) * target.mass))
    return abs(lhs - rhs)


def compose(first: TransportMap, second: TransportMap, b: EmbeddingMap) -> TransportMap:
    """``second o first`` on a 1D grid, interpolating ``second`` in embedded coordinates."""
    if b.grid.dim != 1:
        raise DimensionMismatch("map composition is implemented on 1D grids")
    z = b.line_values()
    ok = second.defined
    mid = np.interp(first.embedded_image[:, 0], z[ok], second.embedded_image[ok, 0])
    emb = np.where(first.defined, mid, np.nan)[:, None]
    return TransportMap(first.source, emb, _images(b, emb, first.defined), first.defined.copy())


def optimality_residual(tmap: TransportMap, dual_phi, b: EmbeddingMap, B: MobilityField | None = None):
    """Max over interior nodes of ``|(grad b)^T (b(r(x)) - b(x)) + grad(phi)/2|``.

    Gradients are central differences; nodes where the map is undefined are
    skipped.  ``B`` is accepted for symmetry with the embedding check and only
    used to confirm the grid.
    """
    if dual_phi is None:
        raise MissingDuals("an exact solve with dual potentials is required")
    if B is not None:
        b.grid.check_same(B.grid)
    g = b.grid
    idx, J = jacobian_fd(b)
    phi = np.asarray(dual_phi, dtype=float).reshape(g.n)
    if g.dim == 1:
        dphi = ((phi[2:] - phi[:-2]) / (2 * g.h[0]))[:, None]
    else:
        d1 = (phi[2:, 1:-1] - phi[:-2, 1:-1]) / (2 * g.h[0])
        d2 = (phi[1:-1, 2:] - phi[1:-1, :-2]) / (2 * g.h[1])
        dphi = np.stack([d1.ravel(), d2.ravel()], axis=1)
    disp = tmap.embedded_image[idx] - b.values[idx]
    r = np.einsum("kqd,kq->kd", J, disp) + 0.5 * dphi
    ok = tmap.defined[idx]
    if not ok.any():
        return 0.0
    return float(np.linalg.norm(r[ok], axis=1).max())


@dataclass
class CycleReport:
    n_cycles: int
    violations: list
    worst: float

    @property
    def passed(self):
        return not self.violations


def cyclical_monotonicity_check(coupling: Coupling, b: EmbeddingMap, k=3, n_cycles=200, seed=CYCLE_SEED, tol=1e-9):
    """Sample ``k``-cycles of support pairs and test every cyclic shift.

    A pair set is cyclically monotone for the quadratic cost in embedded
    coordinates iff ``sum <xi_i, eta_i - eta_sigma(i)> >= 0``.
    """
    i, j, _ = coupling.atoms(SUPPORT_THRESHOLD)
    xi, eta = b.values[i], b.values[j]
    rng = np.random.default_rng(seed)
    violations, worst = [], np.inf
    if i.size < k:
        return CycleReport(0, [], 0.0)
    for _ in range(n_cycles):
        sel = rng.choice(i.size, size=k, replace=False)
        for shift in range(1, k):
            sig = np.roll(sel, -shift)
            val = float(np.sum(xi[sel] * (eta[sel] - eta[sig])))
            worst = min(worst, val)
            if val < -tol:
                violations.append((tuple(int(t) for t in sel), shift, val))
    return CycleReport(n_cycles, violations, worst)


def export_map_csv(tmap: TransportMap, b: EmbeddingMap, path):
    d, q = b.grid.dim, b.q
    header = ["source"] + [f"target_x{t + 1}" for t in range(d)] + [f"target_b{t + 1}" for t in range(q)] + ["mass"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for n in range(b.grid.size):
            img = tmap.image[n] if tmap.image is not None else [np.nan] * d
            w.writerow([n, *map(repr, map(float, img)), *map(repr, map(float, tmap.embedded_image[n])), repr(float(tmap.source.mass[n]))])
