"""Finite-volume reference solver for ``d_t rho = div(A (grad rho + rho grad Psi))``.

Two-point fluxes with exponential fitting (Scharfetter-Gummel): across the
face between nodes ``i`` and ``k`` the mass rate from ``i`` to ``k`` is

    J = |face| A_f / h * (Bern(dPsi) rho_i - Bern(-dPsi) rho_k),   dPsi = Psi_k - Psi_i,

with ``Bern(x) = x / (exp(x) - 1)``.  Since ``Bern(-x) = exp(x) Bern(x)`` the
flux vanishes identically on ``exp(-Psi)``, whatever ``A`` is, so the Gibbs
density is an exact discrete steady state.  The operator acts on node masses
and has zero column sums and nonnegative off-diagonals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .embedding import MobilityField
from .energy import EnergySpec, free_energy
from .errors import SolverFailure, UnsupportedAnisotropy
from .grid import Density

SOLVE_TOL = 1e-12


def bernoulli(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - 0.5 * x, safe / np.expm1(safe))


def _faces(grid, axis):
    """Node index pairs across faces normal to ``axis`` and the face lengths."""
    idx = np.arange(grid.size).reshape(grid.n)
    lo = np.take(idx, np.arange(grid.n[axis] - 1), axis=axis).ravel()
    hi = np.take(idx, np.arange(1, grid.n[axis]), axis=axis).ravel()
    if grid.dim == 1:
        return lo, hi, np.ones(lo.size)
    other = 1 - axis
    w = np.full(grid.n[other], grid.h[other])
    w[0] = w[-1] = grid.h[other] / 2
    length = np.tile(w, grid.n[0] - 1) if axis == 0 else np.repeat(w, grid.n[1] - 1)
    return lo, hi, length


@dataclass(eq=False)
class FVOperator:
    grid: object
    L: sp.csc_matrix = field(repr=False)
    family: str
    psi: np.ndarray = field(repr=False)
    _lu: dict = field(default_factory=dict, repr=False)

    def apply(self, mass):
        return self.L @ mass

    def factor(self, dt):
        key = float(dt)
        if key not in self._lu:
            M = (sp.identity(self.grid.size, format="csc") - dt * self.L).tocsc()
            self._lu[key] = (M, splu(M))
        return self._lu[key]

    def to_triplets(self, path):
        C = self.L.tocoo()
        with open(path, "w") as fh:
            fh.write(f"# {self.grid.size} {self.grid.size} {C.nnz}\n")
            for i, j, v in zip(C.row, C.col, C.data):
                fh.write(f"{i} {j} {v!r}\n")


def assemble_operator(A: MobilityField, Psi, grid=None) -> FVOperator:
    grid = A.grid if grid is None else grid
    grid.check_same(A.grid)
    psi = Psi.psi if isinstance(Psi, EnergySpec) else np.asarray(Psi, dtype=float).ravel()
    if grid.dim == 2 and np.abs(A.A[:, 0, 1]).max() > 0:
        raise UnsupportedAnisotropy("full-tensor mobility in 2D has no consistent two-point flux")
    w = grid.weights
    rows, cols, vals = [], [], []
    for axis in range(grid.dim):
        i, k, length = _faces(grid, axis)
        a_node = A.A[:, axis, axis]
        coef = length * 0.5 * (a_node[i] + a_node[k]) / grid.h[axis]
        dpsi = psi[k] - psi[i]
        fwd = coef * bernoulli(dpsi) / w[i]  # rate i -> k per unit mass at i
        bwd = coef * bernoulli(-dpsi) / w[k]  # rate k -> i per unit mass at k
        rows += [k, i, i, k]
        cols += [i, i, k, k]
        vals += [fwd, -fwd, bwd, -bwd]
    L = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(grid.size, grid.size)
    )
    L.sum_duplicates()
    return FVOperator(grid, L, A.family_tag, psi)


def implicit_euler_step(op: FVOperator, rho: Density, dt: float) -> Density:
    """Solve ``(I - dt L) m_new = m``; the M-matrix keeps ``m_new >= 0``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    M, lu = op.factor(dt)
    m = lu.solve(rho.mass)
    res = np.abs(M @ m - rho.mass).max()
    if not np.all(np.isfinite(m)) or res > SOLVE_TOL * max(1.0, np.abs(rho.mass).max()):
        raise SolverFailure(f"implicit solve residual {res:.3e}")
    # roundoff can leave -1e-20 entries
    return Density.from_mass(op.grid, np.maximum(m, 0.0))


@dataclass
class FVTrajectory:
    times: np.ndarray
    densities: list
    free_energy: np.ndarray
    dt: float

    @property
    def final(self):
        return self.densities[-1]


def run_reference(A: MobilityField, E: EnergySpec, rho0: Density, dt: float, T: float, op=None) -> FVTrajectory:
    op = assemble_operator(A, E) if op is None else op
    n = int(round(T / dt))
    dens = [rho0]
    F = [free_energy(rho0, E)]
    for _ in range(n):
        dens.append(implicit_euler_step(op, dens[-1], dt))
        F.append(free_energy(dens[-1], E))
    return FVTrajectory(dt * np.arange(n + 1), dens, np.array(F), dt)


def weak_form_residual(densities, op: FVOperator, test_fn, dt: float):
    """Discrete weak form of the equation for a space-time test function.

    ``test_fn(x, t)`` (``x`` of shape ``(N, d)``) and its time derivative
    ``test_fn.dt(x, t)`` if present (else a centred difference).  The
    residual is

        int rho(T) psi(T) - int rho0 psi(0) - sum_n dt int rho^{n+1} psi_t(t_{n+1})
            - sum_n dt psi(t_{n+1}) . L rho^{n+1}

    and vanishes for the exact solution; time quadrature makes it O(dt).
    """
    x = op.grid.coords
    T = dt * (len(densities) - 1)

    def psi_t(t):
        if hasattr(test_fn, "dt"):
            return test_fn.dt(x, t)
        d = 1e-6
        return (test_fn(x, t + d) - test_fn(x, t - d)) / (2 * d)

    r = float(densities[-1].mass @ test_fn(x, T) - densities[0].mass @ test_fn(x, 0.0))
    for n in range(1, len(densities)):
        t = n * dt
        m = densities[n].mass
        r -= dt * float(m @ psi_t(t)) + dt * float(test_fn(x, t) @ op.apply(m))
    return r


def heat_series(rho0_fn, x, t, lo=0.0, hi=1.0, n_modes=400, n_quad=20_001):
    """Zero-flux heat solution on ``[lo, hi]`` by cosine series (unit diffusivity)."""
    Lx = hi - lo
    s = np.linspace(lo, hi, n_quad)
    f = rho0_fn(s)
    k = np.arange(n_modes)
    basis = np.cos(np.pi * np.outer(k, s - lo) / Lx)
    coef = np.trapezoid(basis * f, s, axis=1) * 2 / Lx
    coef[0] /= 2
    decay = np.exp(-((np.pi * k / Lx) ** 2) * t)
    return (coef * decay) @ np.cos(np.pi * np.outer(k, np.asarray(x) - lo) / Lx)
