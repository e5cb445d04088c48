"""Damped second-order dynamics and their high-friction limit on ``R^N``.

The model is ``eps y'' = -grad E(y) - B y'`` with the quadratic energy
``E(y) = y.K y/2 - f.y``.  One implicit step with ``v_j = (y_j - y_{j-1})/tau``
solves

    (eps/tau I + B + tau K) v_j = eps v_{j-1}/tau - (K y_{j-1} - f),

which is also the first-order condition of

    min  eps/2 |v - v_{j-1}|^2 + E(y) + tau/2 v.B v   subject to  v = (y - y_{j-1})/tau.

At ``eps = 0`` the same equation is the minimizing-movement step
``(B/tau + K) y_j = B y_{j-1}/tau + f``, so the two schemes coincide exactly.

Multiplying the step by ``tau v_j`` gives the discrete energy balance

    T_j - T_{j-1} + tau v_j.B v_j = -eps/2 |v_j - v_{j-1}|^2 - tau^2/2 v_j.K v_j,

with ``T = eps/2 |v|^2 + E(y)``: the defect is nonpositive and of order ``tau^2``
for well-prepared data.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh

SPD_TOL = 1e-10


def _check_spd(M, name):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    if np.abs(M - M.T).max() > SPD_TOL * max(1.0, np.abs(M).max()):
        raise ValueError(f"{name} is not symmetric")
    if eigh(M, eigvals_only=True)[0] <= SPD_TOL:
        raise ValueError(f"{name} is not positive definite")
    return 0.5 * (M + M.T)


@dataclass(frozen=True, eq=False)
class QuadraticSystem:
    K: np.ndarray = field(repr=False)
    f: np.ndarray = field(repr=False)
    Bfric: np.ndarray = field(repr=False)
    epsilon: float = 0.0
    tau: float = 1e-2

    def __post_init__(self):
        K = _check_spd(self.K, "K")
        B = _check_spd(self.Bfric, "Bfric")
        f = np.asarray(self.f, dtype=float).ravel()
        if K.shape != B.shape or f.shape != (K.shape[0],):
            raise ValueError("K, Bfric and f have inconsistent sizes")
        if self.epsilon < 0 or self.tau <= 0:
            raise ValueError("need epsilon >= 0 and tau > 0")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "Bfric", B)
        object.__setattr__(self, "f", f)

    @property
    def N(self):
        return self.K.shape[0]

    @classmethod
    def random(cls, N=10, seed=0, epsilon=0.0, tau=1e-2, k_range=(1.0, 10.0), b_range=(0.5, 2.0)):
        """SPD ``K`` and ``B`` with spectra in the given ranges and random eigenvectors."""
        rng = np.random.default_rng(seed)

        def spd(lo, hi):
            Q, _ = np.linalg.qr(rng.standard_normal((N, N)))
            return (Q * rng.uniform(lo, hi, N)) @ Q.T

        return cls(spd(*k_range), rng.standard_normal(N), spd(*b_range), epsilon, tau)

    def with_epsilon(self, epsilon):
        return replace(self, epsilon=float(epsilon))

    def energy(self, y):
        y = np.asarray(y, dtype=float)
        return float(0.5 * y @ self.K @ y - self.f @ y)

    def gradient(self, y):
        return self.K @ np.asarray(y, dtype=float) - self.f

    @property
    def equilibrium(self):
        return np.linalg.solve(self.K, self.f)

    def slow_velocity(self, y):
        """``-A grad E(y)``, the velocity of the limiting gradient flow."""
        return -np.linalg.solve(self.Bfric, self.gradient(y))


@dataclass(frozen=True)
class DampedState:
    y: np.ndarray
    v: np.ndarray
    t: float
    total_energy: float


def initial_state(sys: QuadraticSystem, y0, v0=None) -> DampedState:
    y0 = np.asarray(y0, dtype=float).copy()
    v0 = np.zeros_like(y0) if v0 is None else np.asarray(v0, dtype=float).copy()
    return DampedState(y0, v0, 0.0, 0.5 * sys.epsilon * float(v0 @ v0) + sys.energy(y0))


def _factor(sys):
    M = sys.epsilon / sys.tau * np.eye(sys.N) + sys.Bfric + sys.tau * sys.K
    return cho_factor(M)


def damped_step(sys: QuadraticSystem, state: DampedState, factor=None) -> DampedState:
    """One implicit step of the damped dynamics."""
    cf = _factor(sys) if factor is None else factor
    rhs = sys.epsilon / sys.tau * state.v - sys.gradient(state.y)
    v = cho_solve(cf, rhs)
    y = state.y + sys.tau * v
    return DampedState(y, v, state.t + sys.tau, 0.5 * sys.epsilon * float(v @ v) + sys.energy(y))


def step_objective(sys: QuadraticSystem, y_prev, v_prev, y):
    """Objective minimised by :func:`damped_step` as a function of ``y``."""
    v = (np.asarray(y) - y_prev) / sys.tau
    dv = v - v_prev
    return 0.5 * sys.epsilon * float(dv @ dv) + sys.energy(y) + 0.5 * sys.tau * float(v @ sys.Bfric @ v)


def minimizing_movement_step(sys: QuadraticSystem, y_prev):
    """``argmin E(y) + (y - y_prev).B (y - y_prev)/(2 tau)``."""
    y_prev = np.asarray(y_prev, dtype=float)
    M = sys.Bfric / sys.tau + sys.K
    return cho_solve(cho_factor(M), sys.Bfric @ y_prev / sys.tau + sys.f)


def movement_objective(sys: QuadraticSystem, y_prev, y):
    d = np.asarray(y) - y_prev
    return sys.energy(y) + 0.5 / sys.tau * float(d @ sys.Bfric @ d)


def damped_trajectory(sys: QuadraticSystem, y0, v0, n_steps) -> list:
    cf = _factor(sys)
    out = [initial_state(sys, y0, v0)]
    for _ in range(n_steps):
        out.append(damped_step(sys, out[-1], cf))
    return out


def movement_trajectory(sys: QuadraticSystem, y0, n_steps) -> np.ndarray:
    cf = cho_factor(sys.Bfric / sys.tau + sys.K)
    ys = [np.asarray(y0, dtype=float)]
    for _ in range(n_steps):
        ys.append(cho_solve(cf, sys.Bfric @ ys[-1] / sys.tau + sys.f))
    return np.array(ys)


@dataclass
class ComparisonReport:
    epsilons: list
    times: np.ndarray = field(repr=False)
    gap_curves: list = field(repr=False)
    full_gaps: list
    window_gaps: list
    window_factor: float

    @property
    def monotone(self):
        """Windowed gaps nonincreasing along the list (which runs toward small ``eps``).

        Entries whose window is empty (``nan``) are skipped.
        """
        g = [x for x in self.window_gaps if np.isfinite(x)]
        return all(g[k + 1] <= g[k] * (1.0 + 1e-9) + 1e-15 for k in range(len(g) - 1))

    def to_json(self):
        return {
            "epsilons": list(map(float, self.epsilons)),
            "full_gaps": list(map(float, self.full_gaps)),
            "window_gaps": list(map(float, self.window_gaps)),
            "window_factor": self.window_factor,
            "monotone": self.monotone,
        }


def run_comparison(sys: QuadraticSystem, y0, v0, T, epsilons, window_factor=10.0) -> ComparisonReport:
    """Sup-norm gap between damped and minimizing-movement trajectories for each ``eps``.

    The windowed gap ignores the initial layer ``t <= window_factor * eps``.
    """
    n = int(round(T / sys.tau))
    times = sys.tau * np.arange(n + 1)
    ref = movement_trajectory(sys, y0, n)
    curves, full, window = [], [], []
    for eps in epsilons:
        traj = damped_trajectory(sys.with_epsilon(eps), y0, v0, n)
        gap = np.abs(np.array([s.y for s in traj]) - ref).max(axis=1)
        curves.append(gap)
        full.append(float(gap.max()))
        tail = times > window_factor * eps
        window.append(float(gap[tail].max()) if tail.any() else float("nan"))
    return ComparisonReport(list(epsilons), times, curves, full, window, window_factor)


@dataclass
class DissipationReport:
    balance: np.ndarray = field(repr=False)
    balance_identity_error: float
    max_balance_defect: float
    trajectory_equality: float
    margins: np.ndarray = field(repr=False)
    margin_identity_error: float
    scale: float = 1.0

    @property
    def min_margin(self):
        return float(self.margins.min()) if self.margins.size else 0.0

    @property
    def passed(self):
        return bool(np.all(self.balance <= 1e-12 * self.scale) and self.min_margin >= 0.0)

    def to_json(self):
        return {
            "max_balance_defect": self.max_balance_defect,
            "balance_identity_error": self.balance_identity_error,
            "trajectory_equality": self.trajectory_equality,
            "min_margin": self.min_margin,
            "margin_identity_error": self.margin_identity_error,
            "n_samples": int(self.margins.size),
            "passed": self.passed,
        }


def power_balance(sys: QuadraticSystem, y, u, udot):
    """``(d/dt total energy, lower bound)`` for a motion with velocity ``u`` and acceleration ``udot``.

    The lower bound is ``-|eps udot + grad E|_A^2 / 2 - u.B u / 2`` with ``A = B^{-1}``.
    """
    g = sys.epsilon * udot + sys.gradient(y)
    rate = float(u @ g)
    bound = -0.5 * float(g @ np.linalg.solve(sys.Bfric, g)) - 0.5 * float(u @ sys.Bfric @ u)
    return rate, bound


def dissipation_audit(sys: QuadraticSystem, trajectory, n_samples=1000, seed=0, spread=1.0) -> DissipationReport:
    """Discrete energy balance along a damped trajectory and the maximal-dissipation inequality.

    ``balance[j] = T_j - T_{j-1} + tau v_j.B v_j`` should be nonpositive and
    ``O(tau^2)``; it is also compared with its closed form.  The inequality is
    evaluated at trajectory states with the discrete acceleration (where it is
    an equality) and at ``n_samples`` random perturbations of ``(u, udot)``
    (where the margin equals ``|eps udot + grad E + B u|_A^2 / 2 > 0``).
    """
    tau, eps = sys.tau, sys.epsilon
    bal, ident = [], []
    for s0, s1 in zip(trajectory[:-1], trajectory[1:]):
        v, dv = s1.v, s1.v - s0.v
        bal.append(s1.total_energy - s0.total_energy + tau * float(v @ sys.Bfric @ v))
        ident.append(-0.5 * eps * float(dv @ dv) - 0.5 * tau**2 * float(v @ sys.K @ v))
    bal = np.array(bal)
    scale = max(1.0, max(abs(s.total_energy) for s in trajectory))
    ident_err = float(np.abs(bal - np.array(ident)).max()) if bal.size else 0.0

    eq = 0.0
    for s0, s1 in zip(trajectory[:-1], trajectory[1:]):
        rate, bound = power_balance(sys, s1.y, s1.v, (s1.v - s0.v) / tau)
        eq = max(eq, abs(rate - bound) / max(1.0, abs(rate)))

    rng = np.random.default_rng(seed)
    Ainv = np.linalg.inv(sys.Bfric)
    margins, merr = [], 0.0
    for _ in range(n_samples):
        k = rng.integers(1, len(trajectory)) if len(trajectory) > 1 else 0
        s = trajectory[k]
        prev = trajectory[k - 1] if k > 0 else s
        u = s.v + spread * rng.standard_normal(sys.N)
        udot = (s.v - prev.v) / tau + spread * rng.standard_normal(sys.N)
        rate, bound = power_balance(sys, s.y, u, udot)
        m = rate - bound
        r = eps * udot + sys.gradient(s.y) + sys.Bfric @ u
        merr = max(merr, abs(m - 0.5 * float(r @ Ainv @ r)) / max(1.0, abs(m)))
        margins.append(m)
    return DissipationReport(
        bal, ident_err, float(bal.max(initial=-np.inf)) if bal.size else 0.0, eq, np.array(margins), merr, scale
    )
