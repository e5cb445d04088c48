"""Uniform box grids and probability densities living on them.

Nodes sit at ``lo + i*h`` along every axis (the box corners are nodes).  Each
node owns the dual cell of points closer to it than to any other node, so
interior nodes carry volume ``cell_volume`` and boundary nodes a half (or
quarter, at 2D corners) share.  These control volumes are the quadrature
weights used for every integral in the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import GridMismatch

MASS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Grid:
    extents: tuple[tuple[float, float], ...]
    n: tuple[int, ...]

    def __post_init__(self):
        extents = tuple((float(a), float(b)) for a, b in self.extents)
        n = tuple(int(k) for k in self.n)
        if len(extents) != len(n) or len(n) not in (1, 2):
            raise ValueError("grid must be 1D or 2D with one extent per axis")
        for (a, b), k in zip(extents, n):
            if k < 2:
                raise ValueError("need at least 2 nodes per axis")
            if not b > a:
                raise ValueError(f"empty extent [{a}, {b}]")
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "n", n)

    @classmethod
    def line(cls, lo, hi, n):
        return cls(((lo, hi),), (n,))

    @classmethod
    def box(cls, extents, n):
        return cls(tuple(extents), tuple(n))

    @property
    def dim(self):
        return len(self.n)

    @property
    def size(self):
        return int(np.prod(self.n))

    @cached_property
    def h(self):
        return tuple((b - a) / (k - 1) for (a, b), k in zip(self.extents, self.n))

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    @cached_property
    def axes(self):
        return tuple(a + np.arange(k) * hk for (a, _), k, hk in zip(self.extents, self.n, self.h))

    @cached_property
    def coords(self):
        """Node coordinates, shape ``(size, dim)``, C-ordered."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def weights(self):
        """Dual-cell volumes; they sum to the box volume."""
        per_axis = []
        for k, hk in zip(self.n, self.h):
            w = np.full(k, hk)
            w[0] = w[-1] = hk / 2
            per_axis.append(w)
        out = per_axis[0]
        for w in per_axis[1:]:
            out = np.outer(out, w).ravel()
        return out

    def node_index(self, point, atol=1e-12):
        """Flat index of the node at ``point`` or ``None``."""
        point = np.atleast_1d(np.asarray(point, dtype=float))
        idx = []
        for x, (a, _), k, hk in zip(point, self.extents, self.n, self.h):
            i = int(round((x - a) / hk))
            if i < 0 or i >= k or abs(a + i * hk - x) > atol * max(1.0, abs(x)):
                return None
            idx.append(i)
        return int(np.ravel_multi_index(idx, self.n))

    def contains(self, point):
        point = np.atleast_1d(np.asarray(point, dtype=float))
        return all(a <= x <= b for x, (a, b) in zip(point, self.extents))

    def same_as(self, other):
        return self is other or (self.extents == other.extents and self.n == other.n)

    def check_same(self, other):
        if not self.same_as(other):
            raise GridMismatch(f"grid {self.n} on {self.extents} vs {other.n} on {other.extents}")

    def refined(self):
        """Grid with spacing halved on every axis."""
        return Grid(self.extents, tuple(2 * k - 1 for k in self.n))

    def __repr__(self):
        return f"Grid(extents={self.extents}, n={self.n})"


@dataclass(frozen=True, eq=False)
class Density:
    """Probability density stored as node masses (mass = value * weight)."""

    grid: Grid
    mass: np.ndarray = field(repr=False)

    def __post_init__(self):
        mass = np.array(self.mass, dtype=float).ravel()
        if mass.shape != (self.grid.size,):
            raise ValueError(f"expected {self.grid.size} masses, got {mass.shape}")
        if np.any(mass < 0) or not np.all(np.isfinite(mass)):
            raise ValueError("masses must be finite and nonnegative")
        if abs(mass.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"total mass {mass.sum():.15f} is not 1")
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def from_mass(cls, grid, mass, normalize=True):
        mass = np.clip(np.asarray(mass, dtype=float).ravel(), 0.0, None)
        if normalize:
            total = mass.sum()
            if total <= 0:
                raise ValueError("cannot normalize a zero measure")
            mass = mass / total
        return cls(grid, mass)

    @classmethod
    def from_values(cls, grid, values, normalize=True):
        values = np.asarray(values, dtype=float).ravel()
        return cls.from_mass(grid, values * grid.weights, normalize=normalize)

    @classmethod
    def from_function(cls, grid, fn):
        x = grid.coords
        vals = fn(x[:, 0]) if grid.dim == 1 else fn(x[:, 0], x[:, 1])
        return cls.from_values(grid, vals)

    @classmethod
    def uniform(cls, grid):
        return cls.from_values(grid, np.ones(grid.size))

    @classmethod
    def point_mass(cls, grid, index):
        m = np.zeros(grid.size)
        m[index] = 1.0
        return cls(grid, m)

    @property
    def values(self):
        """Pointwise density values (mass divided by control volume)."""
        return self.mass / self.grid.weights

    @property
    def total_mass(self):
        return float(self.mass.sum())

    def l1_distance(self, other):
        self.grid.check_same(other.grid)
        return float(np.abs(self.mass - other.mass).sum())

    def mix(self, other, s):
        """Linear mixture ``(1-s)*self + s*other``."""
        self.grid.check_same(other.grid)
        return Density.from_mass(self.grid, (1 - s) * self.mass + s * other.mass)
