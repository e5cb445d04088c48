"""Minimizing-movement steps ``argmin W^2(rho_n, rho)/(2 tau) + F(rho)``.

Entropic step
-------------
Over couplings ``pi`` with row marginal ``a = rho_n`` and column marginal
``q`` we minimise

    <C, pi>/(2 tau) + eta * sum pi log pi + F(q),    eta = eps / (2 tau),

with ``F(q) = sum q log(q/w) + q Psi``.  Writing ``pi_ij = a_i P_ij(s)``
with ``P`` the row softmax of ``-C/eps + s``, the dual objective in the
column potential ``s`` is

    D(s) = -eta sum_i a_i lse_i(-C_i/eps + s) - sum_j w_j exp(-eta s_j - 1 - Psi_j)

(concave, smooth).  At the maximiser the column marginal ``m`` of ``pi``
equals ``q(s) = w exp(-eta s - 1 - Psi)``.  Eliminating ``s`` between the
two marginal conditions gives the multiplicative proximal update

    q = p^kappa * (w e^{-1-Psi})^(1-kappa),   kappa = eta / (1 + eta),

used by the plain scaling iteration; the default solver runs damped Newton
on ``D`` instead, which reaches the same point without the ``1 - kappa``
contraction that stalls scaling for small ``eps``.

Comparing with the feasible plan ``diag(a)`` certifies the dissipation
inequality up to ``eta * (H(diag a) - H(pi))``; that amount is recorded per
step as the solver slack.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, solve
from scipy.special import logsumexp

from .embedding import EmbeddingMap, MobilityField
from .energy import EnergySpec, embedded_moment, entropy, free_energy
from .errors import MissingMap, NoConvergence, SizeExceeded
from .fpref import assemble_operator
from .grid import Density
from .metric import cost_matrix, solve_kantorovich_exact, wa_distance_1d

MAX_EXACT_SMALL = 64


@dataclass
class JKOConfig:
    tau: float = 1e-2
    n_steps: int = 10
    inner_solver: str = "entropic"
    epsilon: float | None = None
    epsilon_floor: float = 1e-4
    method: str = "newton"
    tol: float = 1e-9
    stall: float = 1e-11
    max_iter: int = 500
    kkt_tol: float = 1e-8

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.epsilon_floor <= 0:
            raise ValueError("epsilon floor must be positive")
        if self.inner_solver not in ("entropic", "exact_small"):
            raise ValueError(f"unknown inner solver {self.inner_solver!r}")
        if self.method not in ("newton", "scaling"):
            raise ValueError(f"unknown method {self.method!r}")

    def resolve_epsilon(self, C):
        """Explicit ``epsilon`` or ``max(min(0.1 tau median_nb(c), 1e-2), floor)``."""
        if self.epsilon is not None:
            return float(self.epsilon)
        nb = np.diag(C, 1)
        nb = nb[nb > 0]
        rule = min(0.1 * self.tau * float(np.median(nb)), 1e-2) if nb.size else 1e-2
        return max(rule, self.epsilon_floor)


@dataclass
class StepReport:
    iterations: int
    converged: bool
    marginal_defect: float
    transport_cost: float
    objective: float
    start_objective: float
    slack: float
    epsilon: float
    kkt_residual: float = float("nan")


def _dual_value(a, logK, s, qlog, eta, rows):
    with np.errstate(over="ignore"):
        return _dual_value_raw(a, logK, s, qlog, eta, rows)


def _dual_value_raw(a, logK, s, qlog, eta, rows):
    Z = logK[rows] + s[None, :]
    lse = logsumexp(Z, axis=1)
    return -eta * float(a[rows] @ lse) - float(np.exp(qlog - eta * s).sum()), Z, lse


def _newton_dual(a, logK, qlog, eta, s, tol, stall, max_iter):
    """Maximise the step dual; returns ``(s, P, m, iterations, converged, defect)``."""
    rows = a > 0
    ar = a[rows]
    D, Z, lse = _dual_value(a, logK, s, qlog, eta, rows)
    it, converged, defect = 0, False, np.inf
    while it < max_iter:
        P = np.exp(Z - lse[:, None])
        m = ar @ P
        q = np.exp(qlog - eta * s)
        defect = float(np.abs(m - q).sum())
        if defect <= tol and it > 0 and abs(dD) < stall:
            converged = True
            break
        H = np.diag(m + eta * q) - (P.T * ar) @ P
        r = q - m
        try:
            step = solve(H, r, assume_a="pos", check_finite=False)
        except (LinAlgError, ValueError):
            step = np.linalg.lstsq(H, r, rcond=None)[0]
        slope = eta * float(r @ step)
        # below rounding of D the line search is blind; trust the Newton step
        blind = slope <= 1e-13 * max(1.0, abs(D))
        t = 1.0
        while True:
            s_new = s + t * step
            D_new, Z_new, lse_new = _dual_value(a, logK, s_new, qlog, eta, rows)
            if blind or D_new >= D + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        dD = D_new - D
        s, D, Z, lse = s_new, D_new, Z_new, lse_new
        it += 1
    else:
        P = np.exp(Z - lse[:, None])
        m = ar @ P
        defect = float(np.abs(m - np.exp(qlog - eta * s)).sum())
    full = np.zeros((a.size, P.shape[1]))
    full[rows] = P
    return s, full, m, it, converged, defect


def _scaling(a, logK, qlog, eta, s, tol, stall, max_iter):
    """Alternating row projection / multiplicative proximal column update."""
    rows = a > 0
    la = np.log(a[rows])
    K = logK[rows]
    kappa = eta / (1.0 + eta)
    hist = []
    converged, defect = False, np.inf
    it = 0
    while it < max_iter:
        lu = la - logsumexp(K + s[None, :], axis=1)
        logp = logsumexp(K + lu[:, None], axis=0)
        m = np.exp(logp + s)
        q = np.exp(qlog - eta * s)
        defect = float(np.abs(m - q).sum())
        hist.append(-eta * float(a[rows] @ (-lu + la)) - float(q.sum()))
        if defect <= tol and len(hist) > 10 and max(hist[-10:]) - min(hist[-10:]) < stall:
            converged = True
            break
        # column prox: q = p^kappa (w e^{-1-Psi})^(1-kappa)
        s = (qlog - logp) / (1.0 + eta)
        it += 1
    lu = la - logsumexp(K + s[None, :], axis=1)
    P = np.zeros((a.size, s.size))
    P[rows] = np.exp(K + s[None, :] + (lu - la)[:, None])
    m = a @ P
    return s, P, m, it, converged, defect


def _plan_entropy(a, P):
    pi = a[:, None] * P
    pos = pi > 0
    return float(np.sum(pi[pos] * np.log(pi[pos])))


def _diag_entropy(a):
    pos = a > 0
    return float(np.sum(a[pos] * np.log(a[pos])))


def jko_step_entropic(rho_n: Density, E: EnergySpec, b: EmbeddingMap, config: JKOConfig, C=None, strict=False):
    """One entropic minimizing-movement step; returns ``(Density, StepReport)``."""
    C = cost_matrix(b).c if C is None else C
    tau = config.tau
    eps = config.resolve_epsilon(C)
    eta = eps / (2 * tau)
    a = rho_n.mass
    w = rho_n.grid.weights
    qlog = np.log(w) - 1.0 - E.psi
    logK = -C / eps
    # stay-put potential: q(s0) = a
    s0 = (qlog - np.log(np.maximum(a, 1e-300))) / eta
    s0 = np.clip(s0, s0[a > 0].min() - 50.0 / eta, None) if np.any(a > 0) else s0
    solver = _newton_dual if config.method == "newton" else _scaling
    s, P, m, it, conv, defect = solver(a, logK, qlog, eta, s0, config.tol, config.stall, config.max_iter)
    if strict and not conv:
        raise NoConvergence(f"JKO step stalled with marginal defect {defect:.3e}")
    out = Density.from_mass(rho_n.grid, m)
    pi_cost = float(np.sum(a[:, None] * P * C))
    H_pi = _plan_entropy(a, P)
    H_0 = _diag_entropy(a)
    obj = pi_cost / (2 * tau) + eta * H_pi + free_energy(out, E)
    start = eta * H_0 + free_energy(rho_n, E)
    slack = eta * max(H_0 - H_pi, 0.0) + max(obj - start, 0.0)
    rep = StepReport(it, conv, defect, pi_cost, obj, start, slack, eps)
    return out, rep


def kkt_residual(a, pi, C, E: EnergySpec, tau, w):
    """Complementarity gap ``sum pi_ij (C_ij/(2 tau) + F'_j - lambda_i)`` of the exact step."""
    q = pi.sum(axis=0)
    Fp = np.log(np.maximum(q / w, 1e-300)) + 1.0 + E.psi
    red = C / (2 * tau) + Fp[None, :]
    lam = red.min(axis=1)
    return float(np.sum(pi * (red - lam[:, None])))


def jko_step_exact_small(
    rho_n: Density, E: EnergySpec, b: EmbeddingMap, config: JKOConfig, C=None, start=None, seed=0, prox=None
):
    """Unregularised step by Bregman proximal point on the coupling.

    Each outer iteration is an entropic step whose reference plan is the
    previous iterate, so the entropic bias vanishes at the fixed point.  The
    start is a random strictly positive feasible plan unless ``start`` (a
    plan with row sums ``rho_n``) is given.
    """
    g = rho_n.grid
    if g.size > MAX_EXACT_SMALL:
        raise SizeExceeded(f"{g.size} nodes exceed the exact-step limit {MAX_EXACT_SMALL}")
    C = cost_matrix(b).c if C is None else C
    tau = config.tau
    a = rho_n.mass
    w = g.weights
    qlog = np.log(w) - 1.0 - E.psi
    Cp = C / (2 * tau)
    eta = float(np.median(np.diag(Cp, 1))) if prox is None else prox
    if start is None:
        rng = np.random.default_rng(seed)
        R = rng.random((g.size, g.size)) + 0.05
        start = a[:, None] * R / R.sum(axis=1, keepdims=True)
    logpi = np.log(np.maximum(start, 1e-300))
    rows = a > 0
    s = np.zeros(g.size)
    it, kkt = 0, np.inf
    while it < 20 * config.max_iter:
        logK = logpi - np.log(np.maximum(a, 1e-300))[:, None] - Cp / eta
        s, P, m, _, _, _ = _newton_dual(a, logK, qlog, eta, s, 1e-13, 1e-15, 200)
        pi = a[:, None] * P
        logpi = np.where(rows[:, None], logK + s[None, :] - logsumexp(logK + s[None, :], axis=1)[:, None], -690.0)
        logpi += np.log(np.maximum(a, 1e-300))[:, None]
        it += 1
        kkt = kkt_residual(a, pi, C, E, tau, w)
        if kkt <= config.kkt_tol:
            break
    out = Density.from_mass(g, pi.sum(axis=0))
    cost = float(np.sum(pi * C))
    obj = cost / (2 * tau) + free_energy(out, E)
    rep = StepReport(it, kkt <= config.kkt_tol, float(np.abs(pi.sum(axis=0) - m).sum()), cost, obj, free_energy(rho_n, E), 0.0, 0.0, kkt)
    return out, rep, pi


def step_objective(rho_n: Density, rho: Density, E: EnergySpec, b: EmbeddingMap, tau):
    """``G_n(rho) = W^2(rho_n, rho)/(2 tau) + F(rho)`` with an exact distance."""
    return exact_wa_squared(rho_n, rho, b) / (2 * tau) + free_energy(rho, E)


def exact_wa_squared(rho0, rho1, b, C=None):
    if b.grid.dim == 1:
        return wa_distance_1d(rho0, rho1, b).wa_squared
    return solve_kantorovich_exact(rho0, rho1, cost_matrix(b) if C is None else C)[1].wa_squared


@dataclass
class JKOTrajectory:
    densities: list
    tau: float
    wa_squared: list = field(default_factory=list)
    transport_cost: list = field(default_factory=list)
    free_energy: list = field(default_factory=list)
    entropy: list = field(default_factory=list)
    moment: list = field(default_factory=list)
    solver_iters: list = field(default_factory=list)
    slacks: list = field(default_factory=list)
    converged: list = field(default_factory=list)
    epsilon: float = float("nan")
    inf_energy: float = float("nan")
    log_zb: float = float("nan")
    embedding: EmbeddingMap | None = field(default=None, repr=False)
    energy: EnergySpec | None = field(default=None, repr=False)
    error: str | None = None

    def at_time(self, t):
        """Piecewise-constant interpolant: ``rho^n`` on ``[n tau, (n+1) tau)``."""
        n = min(int(np.floor(t / self.tau + 1e-9)), len(self.densities) - 1)
        return self.densities[n]

    def ledger(self):
        rows = []
        for n in range(len(self.densities)):
            row = {"step": n, "F": self.free_energy[n], "S": self.entropy[n], "M_b": self.moment[n]}
            if n > 0:
                row.update(
                    wa_squared=self.wa_squared[n - 1],
                    transport_cost=self.transport_cost[n - 1],
                    solver_iters=self.solver_iters[n - 1],
                    slacks=self.slacks[n - 1],
                    converged=self.converged[n - 1],
                )
            rows.append(row)
        return rows

    def export(self, outdir):
        os.makedirs(outdir, exist_ok=True)
        from .io import write_density_csv

        for n, r in enumerate(self.densities):
            write_density_csv(r, os.path.join(outdir, f"step_{n:05d}.csv"))
        with open(os.path.join(outdir, "ledger.json"), "w") as fh:
            json.dump(self.ledger(), fh, indent=2)


def run_jko(rho0: Density, E: EnergySpec, b: EmbeddingMap, config: JKOConfig) -> JKOTrajectory:
    C = cost_matrix(b).c
    g = rho0.grid
    zb = np.exp(-2 * np.linalg.norm(b.values, axis=1))
    traj = JKOTrajectory(
        densities=[rho0],
        tau=config.tau,
        inf_energy=-E.log_partition,
        log_zb=float(np.log(np.sum(g.weights * zb))),
        embedding=b,
        energy=E,
    )
    traj.free_energy.append(free_energy(rho0, E))
    traj.entropy.append(entropy(rho0))
    traj.moment.append(embedded_moment(rho0, b))
    cur = rho0
    for _ in range(config.n_steps):
        try:
            if config.inner_solver == "entropic":
                nxt, rep = jko_step_entropic(cur, E, b, config, C=C)
                traj.epsilon = rep.epsilon
            else:
                nxt, rep, _ = jko_step_exact_small(cur, E, b, config, C=C)
        except Exception as exc:  # keep the partial trajectory
            traj.error = f"{type(exc).__name__}: {exc}"
            break
        traj.wa_squared.append(exact_wa_squared(cur, nxt, b, None if g.dim == 1 else cost_matrix(b)))
        traj.transport_cost.append(rep.transport_cost)
        traj.solver_iters.append(rep.iterations)
        traj.slacks.append(rep.slack)
        traj.converged.append(rep.converged)
        traj.densities.append(nxt)
        traj.free_energy.append(free_energy(nxt, E))
        traj.entropy.append(entropy(nxt))
        traj.moment.append(embedded_moment(nxt, b))
        cur = nxt
    return traj


@dataclass
class BoundCheck:
    name: str
    value: float
    bound: float
    allowed: float

    @property
    def excess(self):
        return max(0.0, self.value - self.bound)

    @property
    def passed(self):
        return self.excess <= self.allowed


@dataclass
class AprioriReport:
    checks: list
    inf_energy: float
    solver_slack: float

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def violations(self):
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self):
        return {
            "passed": self.passed,
            "inf_energy": self.inf_energy,
            "solver_slack": self.solver_slack,
            "checks": [dict(asdict(c), excess=c.excess, passed=c.passed) for c in self.checks],
        }


def apriori_report(traj: JKOTrajectory, tol=1e-6, max_pairs=2000):
    """Audit the energy, square-sum, chain, entropy, moment and Holder bounds.

    Bounds built on the per-step dissipation inequality may be exceeded by
    at most ``tol`` plus the accumulated solver slack (scaled as they enter).
    ``inf F`` is replaced by ``F(Gibbs)``, a lower bound for this energy.
    """
    tau = traj.tau
    F = np.asarray(traj.free_energy)
    W2 = np.asarray(traj.wa_squared)
    b = traj.embedding
    N = len(W2)
    slack = float(np.sum(traj.slacks)) if N else 0.0
    dF = F[0] - traj.inf_energy
    checks = [
        BoundCheck("energy", float(F.max()), float(F[0]), tol + slack),
        BoundCheck("square_sum", float(W2.sum()), 2 * tau * dF, tol + 2 * tau * slack),
    ]
    # chain (mn) and Holder bounds over sampled pairs
    pairs = [(m, n) for m in range(N + 1) for n in range(m + 1, N + 1)]
    if len(pairs) > max_pairs:
        pairs = [(0, n) for n in range(1, N + 1)] + [(n, N) for n in range(1, N)]
    csum = np.concatenate([[0.0], np.cumsum(W2)])
    worst_chain = worst_direct = worst_holder = -np.inf
    for m, n in pairs:
        direct = np.sqrt(exact_wa_squared(traj.densities[m], traj.densities[n], b))
        chain = np.sqrt((n - m) * (csum[n] - csum[m]))
        energy_bound = np.sqrt(2 * tau * (n - m) * (dF + slack))
        holder = np.sqrt(6 * (dF + slack)) * np.sqrt((n - m) * tau)
        worst_direct = max(worst_direct, direct - chain)
        worst_chain = max(worst_chain, chain - energy_bound)
        worst_holder = max(worst_holder, direct - holder)
    if pairs:
        checks += [
            BoundCheck("chain_triangle", worst_direct, 0.0, tol),
            BoundCheck("chain_energy", worst_chain, 0.0, tol),
            BoundCheck("holder", worst_holder, 0.0, tol),
        ]
    eps = 1.0 / (8 * tau)
    c_eps = 1.0 / eps + traj.log_zb
    S = np.asarray(traj.entropy)
    M = np.asarray(traj.moment)
    checks.append(BoundCheck("entropy_lower", float(np.max(-S - c_eps - eps * M)), 0.0, tol))
    if N:
        checks.append(BoundCheck("moment_growth", float(np.max(M[1:] - 2 * W2 - 2 * M[:-1])), 0.0, tol))
    return AprioriReport(checks, traj.inf_energy, slack)


@dataclass
class ELReport:
    residuals: list
    bounds: list
    slack_tol: float

    @property
    def excess(self):
        return [max(0.0, r - b) for r, b in zip(self.residuals, self.bounds)]

    @property
    def passed(self):
        return all(e <= self.slack_tol for e in self.excess)


def el_residual(
    rho_n, rho_np1, tmap, E: EnergySpec, b: EmbeddingMap, tau, test_functions, A: MobilityField, slack_tol=1e-10,
    plan_cost=None, eta=0.0,
):
    """Implicit-Euler defect of a step tested against ``psi(b(x))``.

    For each ``(psi, sup|psi''|)`` the residual

        | int (rho_{n+1} - rho_n)/tau psi(b) + int A grad psi(b) . (grad rho_{n+1} + rho_{n+1} grad Psi) |

    (flux term through the exponentially fitted finite-volume operator) is
    compared with ``sup|psi''| W^2(rho_n, rho_{n+1}) / (2 tau)``, the squared
    distance being the cost of the supplied optimal map.

    For an entropic step pass the plan cost ``<C, pi>`` and ``eta = eps/(2 tau)``:
    integrating the Gibbs form of the plan by parts gives the extra term
    ``eta int psi''(b) rho_{n+1}``, so the bound becomes
    ``sup|psi''| (<C, pi>/(2 tau) + eta)``.
    """
    if tmap is None:
        raise MissingMap("an optimal map between the iterates is required")
    from .maps import map_cost

    w2 = map_cost(tmap, b) if plan_cost is None else max(float(plan_cost), map_cost(tmap, b))
    op = assemble_operator(A, E)
    dm = (rho_np1.mass - rho_n.mass) / tau - op.apply(rho_np1.mass)
    res, bnd = [], []
    for psi, d2 in test_functions:
        zeta = psi(b.values[:, 0] if b.q == 1 else b.values)
        res.append(abs(float(zeta @ dm)))
        bnd.append(d2 * (0.5 * w2 / tau + eta))
    return ELReport(res, bnd, slack_tol)
