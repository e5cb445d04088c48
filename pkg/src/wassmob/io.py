"""CSV/JSON readers and writers shared by the library and the command line."""

from __future__ import annotations

import csv
import json

import numpy as np

from .errors import GridMismatch
from .grid import Density, Grid


def write_density_csv(rho: Density, path):
    """Rows ``x_1..x_d, value`` where ``value`` is the pointwise density."""
    g = rho.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(g.dim)] + ["value"])
        for x, v in zip(g.coords, rho.values):
            w.writerow([repr(float(t)) for t in x] + [repr(float(v))])


def read_density_csv(path, grid: Grid) -> Density:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        data = np.array([[float(t) for t in r] for r in rows], dtype=float)
    except ValueError:
        data = np.array([[float(t) for t in r] for r in rows[1:]], dtype=float)
    if data.shape != (grid.size, grid.dim + 1):
        raise GridMismatch(f"density CSV has shape {data.shape}, expected {(grid.size, grid.dim + 1)}")
    if np.abs(data[:, : grid.dim] - grid.coords).max() > 1e-9:
        raise GridMismatch("density CSV coordinates do not match the grid")
    return Density.from_values(grid, data[:, -1])


def write_json(obj, path):
    """Strict JSON: non-finite floats become ``null``."""
    with open(path, "w") as fh:
        json.dump(_finite(obj), fh, indent=2, sort_keys=True, default=_jsonable, allow_nan=False)


def _finite(o):
    if isinstance(o, dict):
        return {k: _finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite(v) for v in o]
    if isinstance(o, np.ndarray):
        return _finite(o.tolist())
    if isinstance(o, (float, np.floating)):
        return float(o) if np.isfinite(o) else None
    return o


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_long_csv(series, path):
    """Plot bundle: ``series, x, y`` rows from ``{name: (x, y)}``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series", "x", "y"])
        for name, (xs, ys) in series.items():
            for x, y in zip(np.ravel(xs), np.ravel(ys)):
                w.writerow([name, repr(float(x)), repr(float(y))])
