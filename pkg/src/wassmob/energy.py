"""Free energy ``F(rho) = int rho log rho + rho Psi`` and its Gibbs minimiser."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Density, Grid


@dataclass(frozen=True, eq=False)
class EnergySpec:
    """Linear diffusion plus confinement ``Psi >= 0`` sampled on the nodes."""

    grid: Grid
    psi: np.ndarray = field(repr=False)
    grad_psi: np.ndarray = field(repr=False)
    name: str = "custom"

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float).ravel()
        if psi.shape != (self.grid.size,):
            raise ValueError(f"expected {self.grid.size} potential values, got {psi.shape}")
        if np.any(psi < 0) or not np.all(np.isfinite(psi)):
            raise ValueError("confinement must be finite and nonnegative")
        object.__setattr__(self, "psi", psi)

    @classmethod
    def from_function(cls, grid, fn, grad=None, name="custom"):
        x = grid.coords
        psi = fn(x[:, 0]) if grid.dim == 1 else fn(x[:, 0], x[:, 1])
        psi = np.broadcast_to(np.asarray(psi, dtype=float), (grid.size,)).copy()
        if grad is None:
            g = np.gradient(psi.reshape(grid.n), *grid.h)
            g = [g] if grid.dim == 1 else g
            gp = np.stack([gi.ravel() for gi in g], axis=1)
        else:
            gp = np.asarray(grad(x[:, 0]) if grid.dim == 1 else grad(x[:, 0], x[:, 1]), dtype=float).reshape(grid.size, -1)
        return cls(grid, psi, gp, name)

    @classmethod
    def from_values(cls, grid, psi, name="custom"):
        psi = np.asarray(psi, dtype=float).ravel()
        g = np.gradient(psi.reshape(grid.n), *grid.h)
        g = [g] if grid.dim == 1 else g
        return cls(grid, psi, np.stack([gi.ravel() for gi in g], axis=1), name)

    @classmethod
    def zero(cls, grid):
        return cls(grid, np.zeros(grid.size), np.zeros((grid.size, grid.dim)), "zero")

    @classmethod
    def quadratic_well(cls, grid, a=1.0, x0=None):
        """``a |x - x0|^2``; ``x0`` defaults to the box centre."""
        x0 = np.array([0.5 * (lo + hi) for lo, hi in grid.extents]) if x0 is None else np.atleast_1d(x0)
        d = grid.coords - x0
        return cls(grid, a * np.sum(d**2, axis=1), 2 * a * d, "quadratic_well")

    @classmethod
    def double_well(cls, grid, a=1.0, x0=None, c=0.25):
        """``a ((x1 - x0)^2 - c^2)^2`` along the first axis."""
        lo, hi = grid.extents[0]
        x0 = 0.5 * (lo + hi) if x0 is None else float(x0)
        u = grid.coords[:, 0] - x0
        grad = np.zeros((grid.size, grid.dim))
        grad[:, 0] = 4 * a * u * (u**2 - c**2)
        return cls(grid, a * (u**2 - c**2) ** 2, grad, "double_well")

    @property
    def log_partition(self):
        """``log Z`` with ``Z = int exp(-Psi)``; computed stably."""
        m = self.psi.min()
        return float(-m + np.log(np.sum(self.grid.weights * np.exp(-(self.psi - m)))))

    def gibbs(self):
        return Density.from_values(self.grid, np.exp(-(self.psi - self.psi.min())))


def entropy(rho: Density):
    """``S(rho) = int rho log rho`` with ``0 log 0 = 0``."""
    m = rho.mass
    pos = m > 0
    return float(np.sum(m[pos] * np.log(m[pos] / rho.grid.weights[pos])))


def free_energy(rho: Density, E: EnergySpec):
    return entropy(rho) + float(np.sum(rho.mass * E.psi))


def chemical_potential(rho: Density, E: EnergySpec, floor=1e-300):
    """``log rho + 1 + Psi``, the first variation of ``F``."""
    return np.log(np.maximum(rho.values, floor)) + 1.0 + E.psi


def embedded_moment(rho: Density, b):
    """``M_b(rho) = int |b|^2 rho``."""
    return float(np.sum(rho.mass * np.sum(b.values**2, axis=1)))
