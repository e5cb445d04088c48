"""Transport cost ``|b(x) - b(y)|^2`` and the Kantorovich problem it defines.

Three solvers share the :class:`Coupling` / :class:`DistanceReport` types:
an exact LP (HiGHS), log-domain Sinkhorn scaling, and the 1D quantile
coupling in embedded coordinates.  Geodesics, the kinetic action of a
discrete path and the tangent-space pairing live here as well.

The time horizon of the dynamic formulation is fixed to ``tau = 1``; the
squared distance does not depend on it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.sparse.linalg import spsolve
from scipy.special import logsumexp

from .embedding import EmbeddingMap, MobilityField
from .errors import (
    ConstraintViolated,
    ContinuityViolated,
    DimensionMismatch,
    InfeasibleMarginals,
    NoConvergence,
    NotInvertible,
    SingularOperator,
    SizeExceeded,
    SolverFailure,
)
from .grid import Density, Grid

MAX_DENSE_NODES = 20_000
MAX_EXACT_NODES = 512
MASS_MISMATCH_TOL = 1e-10
LOG_FLOOR = 1e-300
_HIGHS_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


@dataclass(frozen=True, eq=False)
class CostMatrix:
    c: np.ndarray = field(repr=False)
    embedding: EmbeddingMap = field(repr=False)

    @property
    def grid(self):
        return self.embedding.grid


@dataclass(eq=False)
class Coupling:
    pi: np.ndarray = field(repr=False)
    row_marginal: Density = field(repr=False)
    col_marginal: Density = field(repr=False)
    transport_cost: float
    dual_phi: np.ndarray | None = field(default=None, repr=False)
    dual_psi: np.ndarray | None = field(default=None, repr=False)
    marginal_defect: float = 0.0
    plan: tuple | None = field(default=None, repr=False)

    def atoms(self, threshold=0.0):
        """Support of the coupling as ``(i, j, mass)`` arrays."""
        if self.plan is not None:
            i, j, m = self.plan
        else:
            i, j = np.nonzero(self.pi)
            m = self.pi[i, j]
        keep = m > threshold
        return i[keep], j[keep], m[keep]

    def dual_slack(self, c):
        """``max(phi_i + psi_j - c_ij)``; nonpositive for a feasible dual pair."""
        if self.dual_phi is None:
            return None
        C = c.c if isinstance(c, CostMatrix) else c
        return float((self.dual_phi[:, None] + self.dual_psi[None, :] - C).max())


@dataclass
class DistanceReport:
    wa_squared: float
    method: str
    dual_value: float | None = None
    gap: float | None = None
    marginal_defect: float = 0.0
    iterations: int = 0
    converged: bool = True

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def cost_matrix(b: EmbeddingMap) -> CostMatrix:
    if b.grid.size > MAX_DENSE_NODES:
        raise SizeExceeded(f"{b.grid.size} nodes exceed the dense-cost limit {MAX_DENSE_NODES}")
    z = b.values
    sq = np.einsum("ij,ij->i", z, z)
    c = sq[:, None] + sq[None, :] - 2.0 * z @ z.T
    # exact zeros/symmetry despite cancellation
    if b.q == 1:
        c = (z[:, 0][:, None] - z[:, 0][None, :]) ** 2
    np.maximum(c, 0.0, out=c)
    np.fill_diagonal(c, 0.0)
    c = 0.5 * (c + c.T)
    c.setflags(write=False)
    return CostMatrix(c, b)


def _check_marginals(rho0, rho1):
    rho0.grid.check_same(rho1.grid)
    diff = abs(rho0.mass.sum() - rho1.mass.sum())
    if diff > MASS_MISMATCH_TOL:
        raise InfeasibleMarginals(f"total masses differ by {diff:.3e}")


def _marginal_defect(pi, a, b):
    return float(np.abs(pi.sum(axis=1) - a).sum() + np.abs(pi.sum(axis=0) - b).sum())


def solve_kantorovich_exact(rho0: Density, rho1: Density, c: CostMatrix):
    """Exact discrete optimal transport by the HiGHS LP solver.

    The LP runs on the supports of the marginals.  Its equality-constraint
    multipliers are then repaired by a double c-transform over the full grid,
    which makes ``phi_i + psi_j <= c_ij`` hold exactly and can only raise the
    dual objective.
    """
    _check_marginals(rho0, rho1)
    a, bm = rho0.mass, rho1.mass
    I, J = np.flatnonzero(a > 0), np.flatnonzero(bm > 0)
    if max(I.size, J.size) > MAX_EXACT_NODES:
        raise SizeExceeded(f"support sizes {I.size}, {J.size} exceed {MAX_EXACT_NODES}")
    C = c.c
    sub = C[np.ix_(I, J)]
    m, n = I.size, J.size
    rows = sp.kron(sp.eye(m), np.ones((1, n)), format="csr")
    cols = sp.kron(np.ones((1, m)), sp.eye(n), format="csr")
    # the last column constraint is implied by the others
    A_eq = sp.vstack([rows, cols[:-1]], format="csr")
    b_eq = np.concatenate([a[I], (bm[J] * (a.sum() / bm.sum()))[:-1]])
    res = linprog(sub.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs", options=_HIGHS_OPTIONS)
    if res.status != 0:
        raise SolverFailure(f"LP solver failed: {res.message}")
    x = np.clip(res.x.reshape(m, n), 0.0, None)
    pi = np.zeros_like(C)
    pi[np.ix_(I, J)] = x

    y = res.eqlin.marginals
    phi_I = y[:m]
    psi = (C[I, :] - phi_I[:, None]).min(axis=0)
    phi = (C - psi[None, :]).min(axis=1)

    primal = float((pi * C).sum())
    dual = float(phi @ a + psi @ bm)
    cp = Coupling(
        pi=pi,
        row_marginal=rho0,
        col_marginal=rho1,
        transport_cost=primal,
        dual_phi=phi,
        dual_psi=psi,
        marginal_defect=_marginal_defect(pi, a, bm),
    )
    rep = DistanceReport(
        wa_squared=primal,
        method="exact_lp",
        dual_value=dual,
        gap=primal - dual,
        marginal_defect=cp.marginal_defect,
        iterations=int(getattr(res, "nit", 0)),
    )
    return cp, rep


def sinkhorn_log(a, b, C, eps, f=None, g=None, max_iter=10_000, tol=1e-9, check_every=10):
    """Log-domain Sinkhorn; returns potentials ``(f, g)``, iterations, defect.

    The coupling is ``exp((f_i + g_j - C_ij)/eps)``; the column marginal is
    exact after each sweep and ``defect`` is the l1 row-marginal error.
    """
    la = np.log(np.maximum(a, LOG_FLOOR))
    lb = np.log(np.maximum(b, LOG_FLOOR))
    f = np.zeros(a.size) if f is None else f.copy()
    g = np.zeros(b.size) if g is None else g.copy()
    defect = np.inf
    it = 0
    while it < max_iter:
        f = eps * (la - logsumexp((g[None, :] - C) / eps, axis=1))
        g = eps * (lb - logsumexp((f[:, None] - C) / eps, axis=0))
        it += 1
        if it % check_every == 0 or it == max_iter:
            P = np.exp((f[:, None] + g[None, :] - C) / eps)
            defect = float(np.abs(P.sum(axis=1) - a).sum())
            if defect <= tol:
                break
    return f, g, it, defect


def solve_kantorovich_entropic(
    rho0: Density,
    rho1: Density,
    c: CostMatrix,
    epsilon: float,
    max_iter: int = 10_000,
    tol: float = 1e-9,
    schedule: bool = True,
    strict: bool = False,
):
    """Entropic optimal transport with a geometric epsilon schedule.

    Starts at ``max(epsilon, 0.1 * max c)`` and halves down to ``epsilon``,
    warm-starting the potentials.  The reported value is ``<c, pi>`` without
    the entropy term.  If the marginal defect never drops below ``tol`` the
    last iterate is returned with ``converged=False`` (or
    :class:`NoConvergence` is raised when ``strict``).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    _check_marginals(rho0, rho1)
    a, bm = rho0.mass, rho1.mass
    C = c.c
    eps_seq = [epsilon]
    if schedule:
        e = max(epsilon, 0.1 * float(C.max()))
        eps_seq = []
        while e > epsilon:
            eps_seq.append(e)
            e *= 0.5
        eps_seq.append(epsilon)
    f = g = None
    total = 0
    defect = np.inf
    for k, e in enumerate(eps_seq):
        last = k == len(eps_seq) - 1
        f, g, it, defect = sinkhorn_log(
            a, bm, C, e, f, g, max_iter=max_iter - total if last else min(500, max_iter), tol=tol if last else 1e-4
        )
        total += it
    pi = np.exp((f[:, None] + g[None, :] - C) / epsilon)
    cost = float((pi * C).sum())
    converged = defect <= tol
    if strict and not converged:
        raise NoConvergence(f"marginal defect {defect:.3e} after {total} iterations")
    cp = Coupling(pi, rho0, rho1, cost, f, g, _marginal_defect(pi, a, bm))
    rep = DistanceReport(cost, "entropic", None, None, cp.marginal_defect, total, converged)
    return cp, rep


def quantile_plan(m0, m1):
    """Monotone (north-west corner) coupling of two mass vectors on ordered atoms."""
    F0 = np.cumsum(m0)
    F1 = np.cumsum(m1)
    F0 /= F0[-1]
    F1 /= F1[-1]
    t = np.unique(np.concatenate([[0.0], F0, F1]))
    t = t[(t >= 0.0) & (t <= 1.0)]
    dt = np.diff(t)
    mid = 0.5 * (t[1:] + t[:-1])
    keep = dt > 0
    mid, dt = mid[keep], dt[keep]
    i = np.minimum(np.searchsorted(F0, mid, side="left"), m0.size - 1)
    j = np.minimum(np.searchsorted(F1, mid, side="left"), m1.size - 1)
    return i, j, dt * m0.sum()


def _require_1d(b):
    if b.grid.dim != 1:
        raise DimensionMismatch(f"operation needs a 1D grid, got dim={b.grid.dim}")


def coupling_1d(rho0: Density, rho1: Density, b: EmbeddingMap) -> Coupling:
    """Optimal 1D coupling: quantile matching of the embedded measures."""
    _require_1d(b)
    _check_marginals(rho0, rho1)
    z = b.line_values()
    i, j, m = quantile_plan(rho0.mass, rho1.mass)
    cost = float(np.sum(m * (z[i] - z[j]) ** 2))
    n = b.grid.size
    pi = sp.coo_matrix((m, (i, j)), shape=(n, n)).toarray()
    return Coupling(
        pi=pi,
        row_marginal=rho0,
        col_marginal=rho1,
        transport_cost=cost,
        marginal_defect=_marginal_defect(pi, rho0.mass, rho1.mass),
        plan=(i, j, m),
    )


def wa_distance_1d(rho0: Density, rho1: Density, b: EmbeddingMap) -> DistanceReport:
    cp = coupling_1d(rho0, rho1, b)
    return DistanceReport(cp.transport_cost, "closed_form_1d", marginal_defect=cp.marginal_defect)


def wa_squared(rho0, rho1, b, method="auto"):
    """Convenience wrapper returning only the squared distance."""
    if method == "closed_form_1d" or (method == "auto" and b.grid.dim == 1):
        return wa_distance_1d(rho0, rho1, b).wa_squared
    return solve_kantorovich_exact(rho0, rho1, cost_matrix(b))[1].wa_squared


def deposit(grid: Grid, points, masses):
    """Split point masses linearly (bilinearly in 2D) onto the bracketing nodes."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] != np.size(masses) and points.shape[1] == np.size(masses):
        points = points.T
    out = np.zeros(grid.n)
    base, frac = [], []
    for k in range(grid.dim):
        lo = grid.extents[k][0]
        u = np.clip((points[:, k] - lo) / grid.h[k], 0.0, grid.n[k] - 1)
        i0 = np.minimum(np.floor(u).astype(int), grid.n[k] - 2)
        base.append(i0)
        frac.append(u - i0)
    if grid.dim == 1:
        np.add.at(out, base[0], masses * (1 - frac[0]))
        np.add.at(out, base[0] + 1, masses * frac[0])
    else:
        for di in (0, 1):
            for dj in (0, 1):
                wgt = (frac[0] if di else 1 - frac[0]) * (frac[1] if dj else 1 - frac[1])
                np.add.at(out, (base[0] + di, base[1] + dj), masses * wgt)
    return out.ravel()


def geodesic_interpolate(coupling: Coupling, b: EmbeddingMap, s: float, tau: float = 1.0) -> Density:
    """Displacement interpolation along straight lines in embedded coordinates."""
    if not b.invertible:
        raise NotInvertible(f"no inverse of the {b.family} embedding")
    if not 0.0 <= s <= tau:
        raise ValueError(f"s={s} outside [0, {tau}]")
    i, j, m = coupling.atoms()
    t = s / tau
    z = (1 - t) * b.values[i] + t * b.values[j]
    x = b.inverse(z)
    if b.grid.dim == 1:
        x = np.asarray(x).reshape(-1, 1)
        # PCHIP returns nan a hair outside its knots
        lo, hi = b.grid.extents[0]
        bad = ~np.isfinite(x[:, 0])
        x[bad, 0] = np.where(z[bad, 0] <= b.values[0, 0], lo, hi)
    return Density.from_mass(b.grid, deposit(b.grid, x, m))


def geodesic_path(coupling, b, n_slices):
    return [geodesic_interpolate(coupling, b, k / n_slices) for k in range(n_slices + 1)]


def face_mobility(A: MobilityField):
    """Scalar mobility on the faces of a 1D grid (arithmetic mean of nodes)."""
    a = A.scalar_A()
    return 0.5 * (a[1:] + a[:-1])


def face_density(rho: Density):
    v = rho.values
    return 0.5 * (v[1:] + v[:-1])


def continuity_fluxes(path, tau=1.0):
    """Face fluxes making the discrete continuity equation exact in 1D.

    Between slices ``k`` and ``k+1`` the mass crossing face ``i+1/2`` per unit
    time is ``-(F_{k+1} - F_k)_i / ds`` with ``F`` the cumulative mass.
    """
    ds = tau / (len(path) - 1)
    F = np.array([np.cumsum(r.mass)[:-1] for r in path])
    return -(F[1:] - F[:-1]) / ds


def path_velocities(path, tau=1.0):
    """Face velocities ``flux / rho_face`` at the time midpoints of a 1D path."""
    J = continuity_fluxes(path, tau)
    out = []
    for k in range(len(path) - 1):
        rf = 0.5 * (face_density(path[k]) + face_density(path[k + 1]))
        with np.errstate(divide="ignore", invalid="ignore"):
            out.append(np.where(rf > 0, J[k] / np.where(rf > 0, rf, 1.0), 0.0))
    return out


def continuity_residual(path, velocities, tau=1.0):
    """Max l1 defect of ``d_s rho + div(rho v) = 0`` over all slices (mass units)."""
    ds = tau / (len(path) - 1)
    worst = 0.0
    for k, v in enumerate(velocities):
        rf = 0.5 * (face_density(path[k]) + face_density(path[k + 1]))
        flux = np.concatenate([[0.0], rf * v, [0.0]])
        r = (path[k + 1].mass - path[k].mass) / ds + np.diff(flux)
        worst = max(worst, float(np.abs(r).sum()))
    return worst


def dynamic_action(path, velocities, B: MobilityField, tau=1.0, tol=1e-8):
    """Kinetic action ``tau * int int rho v.Bv`` of a discrete 1D path.

    ``velocities[k]`` lives on the faces at the time midpoint of slices ``k``
    and ``k+1``; the density there is the average of both slices, so the space
    integral is a face-centred rule and the time integral a midpoint rule.
    """
    if B.grid.dim != 1:
        raise DimensionMismatch("the dynamic action is implemented on 1D grids")
    if len(velocities) != len(path) - 1:
        raise ValueError("need one velocity field per time interval")
    res = continuity_residual(path, velocities, tau)
    if res > tol:
        raise ContinuityViolated(res, tol)
    ds = tau / (len(path) - 1)
    h = B.grid.h[0]
    Bf = 1.0 / face_mobility(B)
    total = 0.0
    for k, v in enumerate(velocities):
        rf = 0.5 * (face_density(path[k]) + face_density(path[k + 1]))
        total += ds * float(np.sum(rf * v * v * Bf) * h)
    return tau * total


def _elliptic_matrix(rho: Density, A: MobilityField, floor=LOG_FLOOR):
    g = rho.grid
    h = g.h[0]
    coef = np.maximum(face_density(rho), floor) * face_mobility(A) / h
    if not np.all(coef > 0):
        raise SingularOperator("face coefficient vanished; operator decouples")
    n = g.size
    main = np.zeros(n)
    main[:-1] += coef
    main[1:] += coef
    L = sp.diags([main, -coef, -coef], [0, 1, -1], format="csc")
    return L, coef


def solve_potential(rho: Density, s, A: MobilityField):
    """Zero-mean ``p`` with ``-div(rho A grad p) = s`` and zero-flux ends (1D)."""
    if rho.grid.dim != 1:
        raise DimensionMismatch("tangent pairing is implemented on 1D grids")
    w = rho.grid.weights
    s = np.asarray(s, dtype=float)
    if abs(float(s @ w)) > 1e-12:
        raise ValueError(f"source integral {float(s @ w):.3e} is not zero")
    L, _ = _elliptic_matrix(rho, A)
    n = rho.grid.size
    # bordered system pins the constant nullspace
    K = sp.bmat([[L, sp.csc_matrix(w[:, None])], [sp.csc_matrix(w[None, :]), None]], format="csc")
    sol = spsolve(K, np.concatenate([s * w, [0.0]]))
    p = sol[:n]
    if not np.all(np.isfinite(p)) or np.abs(L @ p - s * w).max() > 1e-8 * max(1.0, np.abs(s * w).max()):
        raise SingularOperator("elliptic solve failed beyond the constant nullspace")
    return p


def tangent_pairing(rho: Density, s1, s2, A: MobilityField):
    """``g_rho(s1, s2) = int s1 p2`` with ``p2`` the potential of ``s2``."""
    p2 = solve_potential(rho, s2, A)
    return float(np.sum(np.asarray(s1) * p2 * rho.grid.weights))


def optimal_velocity(rho: Density, s, A: MobilityField):
    """Face velocity ``A grad p`` realising the tangent vector ``s``."""
    p = solve_potential(rho, s, A)
    return face_mobility(A) * np.diff(p) / rho.grid.h[0]


@dataclass
class MinimalityReport:
    g_ss: float
    actions: list
    margins: list
    passed: bool


def minimality_check(rho: Density, s, A: MobilityField, trial_velocities, tol=1e-9, constraint_tol=1e-9):
    """Check ``int rho v.Bv >= g_rho(s, s)`` over trial face velocities.

    Every trial must satisfy ``s + div(rho v) = 0``; otherwise
    :class:`ConstraintViolated` reports the first offender.
    """
    s = np.asarray(s, dtype=float)
    g = rho.grid
    h = g.h[0]
    rf = np.maximum(face_density(rho), LOG_FLOOR)
    Bf = 1.0 / face_mobility(A)
    gss = tangent_pairing(rho, s, s, A)
    actions, margins = [], []
    scale = max(1.0, np.abs(s * g.weights).max())
    for k, v in enumerate(trial_velocities):
        v = np.asarray(v, dtype=float)
        flux = np.concatenate([[0.0], rf * v, [0.0]])
        r = float(np.abs(s * g.weights + np.diff(flux)).max())
        if r > constraint_tol * scale:
            raise ConstraintViolated(k, r)
        act = float(np.sum(rf * v * v * Bf) * h)
        actions.append(act)
        margins.append(act - gss)
    passed = all(m >= -tol for m in margins)
    return MinimalityReport(gss, actions, margins, passed)
