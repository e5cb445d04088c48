"""Experiment pipelines behind the command line.

Each pipeline takes a validated :class:`ExperimentConfig` and returns an
:class:`Artifacts` bundle: densities, JSON ledgers, long-format plot data and
named checks.  :func:`emit_results` writes the bundle with a hashed manifest.
"""

from __future__ import annotations

import csv
import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig, emit_config
from .embedding import MobilityField, build_embedding
from .energy import EnergySpec
from .fpref import assemble_operator, implicit_euler_step, run_reference
from .grid import Density, Grid
from .io import read_density_csv, write_density_csv, write_json, write_long_csv
from .jko import JKOConfig, apriori_report, el_residual, run_jko
from .maps import map_1d_monotone
from .metric import (
    MAX_EXACT_NODES,
    coupling_1d,
    cost_matrix,
    dynamic_action,
    geodesic_path,
    path_velocities,
    solve_kantorovich_exact,
    wa_distance_1d,
)
from .relaxation import QuadraticSystem, damped_trajectory, dissipation_audit, run_comparison


def worker_count():
    """Worker threads allowed by ``WASSMOB_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("WASSMOB_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    items = list(items)
    n = worker_count()
    if n == 1 or len(items) < 2:
        return [fn(t) for t in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


@dataclass
class Check:
    passed: bool
    value: float
    threshold: float
    note: str = ""

    def to_json(self):
        return {"passed": bool(self.passed), "value": float(self.value), "threshold": float(self.threshold), "note": self.note}


@dataclass
class Artifacts:
    densities: dict = field(default_factory=dict)
    ledgers: dict = field(default_factory=dict)
    plots: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks.values())

    def check(self, name, value, threshold, upper=True, note=""):
        ok = bool(np.isfinite(value)) and (value <= threshold if upper else value >= threshold)
        self.checks[name] = Check(ok, value, threshold, note)


# builders


def build_grid(cfg: ExperimentConfig) -> Grid:
    g = cfg["grid"]
    return Grid(tuple(zip(g["lo"], g["hi"])), g["n"])


def build_mobility(cfg: ExperimentConfig, grid: Grid) -> MobilityField:
    m = cfg["mobility"]
    d = grid.dim
    if m["family"] == "constant":
        vals = np.asarray(m["matrix"], dtype=float)
        A = vals[0] * np.eye(d) if vals.size == 1 else vals.reshape(d, d)
        return MobilityField.constant(A, grid)
    if m["family"] == "exponential":
        rates = np.broadcast_to(np.asarray(m["rate"], dtype=float), (d,))
        if d == 1:
            return MobilityField.scalar_1d(lambda x: np.exp(rates[0] * x), grid)
        return MobilityField.separable([lambda x, r=r: np.exp(r * x) for r in rates], grid)
    return MobilityField.from_csv(m["path"], grid)


def build_potential(cfg: ExperimentConfig, grid: Grid) -> EnergySpec:
    p = cfg["potential"]
    x0 = p["x0"] if p["x0"] else None
    if p["kind"] == "zero":
        return EnergySpec.zero(grid)
    if p["kind"] == "quadratic_well":
        return EnergySpec.quadratic_well(grid, p["a"], x0)
    if p["kind"] == "double_well":
        return EnergySpec.double_well(grid, p["a"], None if x0 is None else x0[0], p["c"])
    rows = np.loadtxt(p["path"], delimiter=",", ndmin=2, comments="#", skiprows=_header_rows(p["path"]))
    if rows.shape != (grid.size, grid.dim + 1) or np.abs(rows[:, :-1] - grid.coords).max() > 1e-9:
        raise ValueError(f"potential CSV {p['path']} does not match the grid")
    return EnergySpec.from_values(grid, rows[:, -1], name="csv")


def _header_rows(path):
    with open(path) as fh:
        first = next(csv.reader(fh), [""])
    try:
        [float(t) for t in first]
        return 0
    except ValueError:
        return 1


def build_density(cfg: ExperimentConfig, section: str, grid: Grid) -> Density:
    s = cfg[section]
    x = grid.coords
    if s["kind"] == "uniform":
        return Density.uniform(grid)
    if s["kind"] == "linear":
        vals = s["intercept"] + s["slope"] * x[:, 0]
        if np.any(vals < 0):
            raise ValueError(f"{section}: linear profile is negative on the grid")
        return Density.from_values(grid, vals)
    if s["kind"] == "gaussian":
        c = np.broadcast_to(np.asarray(s["center"], dtype=float), (grid.dim,))
        r2 = np.sum((x - c) ** 2, axis=1)
        return Density.from_values(grid, np.exp(-r2 / (2 * s["width"] ** 2)) + s["floor"])
    return read_density_csv(s["path"], grid)


def _jko_config(cfg, tau=None, steps=None, epsilon=None):
    s = cfg["solver"]
    return JKOConfig(
        tau=s["tau"] if tau is None else tau,
        n_steps=s["steps"] if steps is None else steps,
        epsilon=s["epsilon"] if epsilon is None else epsilon,
        epsilon_floor=s["epsilon_floor"],
        method=s["method"],
        tol=s["tol"],
        max_iter=s["max_iter"],
    )


def _density_series(grid, dens):
    x = grid.coords[:, 0] if grid.dim == 1 else np.arange(grid.size)
    return {name: (x, r.values) for name, r in dens.items()}


# pipelines


def exp_distance(cfg: ExperimentConfig) -> Artifacts:
    out = Artifacts()
    grid = build_grid(cfg)
    b = build_embedding(build_mobility(cfg, grid))
    r0, r1 = build_density(cfg, "initial", grid), build_density(cfg, "target", grid)
    out.densities.update(rho0=r0, rho1=r1)
    if grid.dim == 1:
        rep = wa_distance_1d(r0, r1, b)
        ledger = {"closed_form": _report(rep)}
        if grid.size <= MAX_EXACT_NODES:
            _, lp = solve_kantorovich_exact(r0, r1, cost_matrix(b))
            ledger["exact_lp"] = _report(lp)
            out.check("solver_agreement", abs(lp.wa_squared - rep.wa_squared), 1e-8)
            out.check("duality_gap", abs(lp.gap), 1e-8)
    else:
        _, rep = solve_kantorovich_exact(r0, r1, cost_matrix(b))
        ledger = {"exact_lp": _report(rep)}
        out.check("duality_gap", abs(rep.gap), 1e-8)
    w2 = rep.wa_squared
    ledger["wa_squared"] = w2
    out.ledgers["distance"] = ledger
    out.check("nonnegative", -w2, 1e-12)
    out.check("marginal_defect", rep.marginal_defect, 1e-9)
    if r0.l1_distance(r1) == 0.0:
        out.check("identity", w2, 1e-12)
    out.plots["densities"] = _density_series(grid, out.densities)
    return out


def _report(rep):
    return {k: getattr(rep, k) for k in ("wa_squared", "method", "dual_value", "gap", "marginal_defect", "iterations", "converged")}


def exp_geodesic(cfg: ExperimentConfig) -> Artifacts:
    out = Artifacts()
    grid = build_grid(cfg)
    A = build_mobility(cfg, grid)
    b = build_embedding(A)
    r0, r1 = build_density(cfg, "initial", grid), build_density(cfg, "target", grid)
    k = cfg["solver"]["slices"]
    if grid.dim == 1:
        cp = coupling_1d(r0, r1, b)
    else:
        cp, _ = solve_kantorovich_exact(r0, r1, cost_matrix(b))
    w2 = cp.transport_cost
    path = geodesic_path(cp, b, k)
    for i, r in enumerate(path):
        out.densities[f"slice_{i:03d}"] = r
    out.check("mass", max(abs(r.total_mass - 1.0) for r in path), 1e-12)
    out.check("endpoints", max(path[0].l1_distance(r0), path[-1].l1_distance(r1)), 1e-8)
    ledger = {"wa_squared": w2, "slices": k}
    if grid.dim == 1:
        v = path_velocities(path)
        act = dynamic_action(path, v, A)
        rel = abs(act - w2) / max(w2, 1e-300)
        ledger.update(action=act, relative_gap=rel)
        out.check("action_matches_distance", rel, 0.02)
    out.ledgers["geodesic"] = ledger
    out.plots["slices"] = _density_series(grid, {f"s={i / k:.4f}": r for i, r in enumerate(path)})
    return out


def exp_jko(cfg: ExperimentConfig) -> Artifacts:
    out = Artifacts()
    grid = build_grid(cfg)
    b = build_embedding(build_mobility(cfg, grid))
    E = build_potential(cfg, grid)
    rho0 = build_density(cfg, "initial", grid)
    jc = _jko_config(cfg)
    traj = run_jko(rho0, E, b, jc)
    rep = apriori_report(traj, tol=cfg["checks"]["apriori_tol"])
    for n, r in enumerate(traj.densities):
        out.densities[f"step_{n:05d}"] = r
    out.densities["gibbs"] = E.gibbs()
    out.ledgers["trajectory"] = {"tau": jc.tau, "epsilon": traj.epsilon, "error": traj.error, "steps": traj.ledger()}
    out.ledgers["apriori"] = rep.to_dict()
    for c in rep.checks:
        out.checks[f"bound_{c.name}"] = Check(c.passed, c.excess, c.allowed, f"value {c.value:.6g} vs bound {c.bound:.6g}")
    out.check("completed", 0.0 if traj.error is None else 1.0, 0.0, note=traj.error or "")
    out.check("solver_converged", float(sum(not c for c in traj.converged)), 0.0)
    t = jc.tau * np.arange(len(traj.densities))
    out.plots["energy"] = {"free_energy": (t, traj.free_energy), "moment": (t, traj.moment)}
    out.plots["densities"] = _density_series(grid, {"initial": rho0, "final": traj.densities[-1], "gibbs": E.gibbs()})
    return out


def _fv_times(cfg):
    s = cfg["solver"]
    dt = s["dt"] or s["tau"]
    T = s["horizon"] or s["steps"] * dt
    return dt, T


def exp_fv_reference(cfg: ExperimentConfig) -> Artifacts:
    out = Artifacts()
    grid = build_grid(cfg)
    A = build_mobility(cfg, grid)
    E = build_potential(cfg, grid)
    rho0 = build_density(cfg, "initial", grid)
    dt, T = _fv_times(cfg)
    op = assemble_operator(A, E)
    tr = run_reference(A, E, rho0, dt, T, op=op)
    gibbs = E.gibbs()
    out.densities.update(initial=rho0, final=tr.final, gibbs=gibbs)
    out.check("mass", max(abs(r.mass.sum() - 1.0) for r in tr.densities), 1e-12)
    out.check("positivity", -min(r.mass.min() for r in tr.densities), 0.0)
    out.check("energy_decay", float(np.max(np.diff(tr.free_energy), initial=0.0)), 1e-12)
    out.check("gibbs_fixed_point", implicit_euler_step(op, gibbs, dt).l1_distance(gibbs), 1e-12)
    out.ledgers["fv"] = {
        "dt": dt,
        "horizon": T,
        "free_energy": tr.free_energy,
        "l1_to_gibbs": tr.final.l1_distance(gibbs),
    }
    out.plots["energy"] = {"free_energy": (tr.times, tr.free_energy)}
    out.plots["densities"] = _density_series(grid, {"initial": rho0, "final": tr.final, "gibbs": gibbs})
    return out


def exp_jko_vs_fv(cfg: ExperimentConfig) -> Artifacts:
    """L1 gap between JKO and implicit-Euler FV at the horizon for several steps.

    With no explicit ``epsilon`` the regularisation follows ``eps = coeff * tau^2``
    so that its bias shrinks with ``tau``.
    """
    out = Artifacts()
    grid = build_grid(cfg)
    A = build_mobility(cfg, grid)
    b = build_embedding(A)
    E = build_potential(cfg, grid)
    rho0 = build_density(cfg, "initial", grid)
    s = cfg["solver"]
    T = s["horizon"] or 0.1
    taus = list(s["taus"])
    op = assemble_operator(A, E)

    def one(tau):
        n = int(round(T / tau))
        eps = s["epsilon"] or s["epsilon_coeff"] * tau**2
        traj = run_jko(rho0, E, b, _jko_config(cfg, tau=tau, steps=n, epsilon=eps))
        fv = run_reference(A, E, rho0, tau, n * tau, op=op)
        worst = np.nan
        if grid.dim == 1 and traj.error is None:
            worst = 0.0
            eta = traj.epsilon / (2 * tau)
            tests = [(lambda z: z**2, 2.0)]
            for k in range(len(traj.densities) - 1):
                p, q = traj.densities[k], traj.densities[k + 1]
                r = el_residual(p, q, map_1d_monotone(p, q, b), E, b, tau, tests, A,
                                plan_cost=traj.transport_cost[k], eta=eta)
                worst = max(worst, max(x / y for x, y in zip(r.residuals, r.bounds)))
        return eps, traj, fv, worst

    runs = _pmap(one, taus)
    gaps = [traj.densities[-1].l1_distance(fv.final) for _, traj, fv, _ in runs]
    orders = [float(np.log(gaps[k] / gaps[k + 1]) / np.log(taus[k] / taus[k + 1])) for k in range(len(taus) - 1)]
    out.ledgers["convergence"] = {
        "horizon": T,
        "taus": taus,
        "epsilons": [r[0] for r in runs],
        "l1_gaps": gaps,
        "orders": orders,
        "truncation_ratio": [r[3] for r in runs],
        "errors": [r[1].error for r in runs],
    }
    out.check("tau_order", min(orders), s["min_order"], upper=False)
    if grid.dim == 1:
        out.check("truncation_bound", max(r[3] for r in runs), 1.0)
    for tau, (_, traj, fv, _) in zip(taus, runs):
        out.densities[f"jko_tau_{tau:g}"] = traj.densities[-1]
        out.densities[f"fv_tau_{tau:g}"] = fv.final
    out.plots["gap"] = {"l1_gap": (taus, gaps)}
    return out


def exp_relaxation(cfg: ExperimentConfig) -> Artifacts:
    out = Artifacts()
    r = cfg["relaxation"]
    rng = np.random.default_rng(cfg.seed)
    sys = QuadraticSystem.random(r["dimension"], seed=rng, tau=r["tau"])
    y0 = rng.standard_normal(sys.N)
    comp = run_comparison(sys, y0, np.zeros(sys.N), r["horizon"], r["epsilons"], r["window"])
    out.ledgers["comparison"] = comp.to_json()
    out.check("windowed_gap_monotone", 0.0 if comp.monotone else 1.0, 0.0)
    n = int(round(r["horizon"] / r["tau"]))
    audits, consts = {}, {}
    for eps in r["epsilons"]:
        # well-prepared start: velocity of the limiting flow
        coarse = sys.with_epsilon(eps)
        fine = QuadraticSystem(coarse.K, coarse.f, coarse.Bfric, eps, coarse.tau / 2)
        a1 = dissipation_audit(coarse, damped_trajectory(coarse, y0, coarse.slow_velocity(y0), n), r["samples"], cfg.seed)
        a2 = dissipation_audit(fine, damped_trajectory(fine, y0, fine.slow_velocity(y0), 2 * n), 0, cfg.seed)
        c1 = float(np.abs(a1.balance).max()) / coarse.tau**2
        c2 = float(np.abs(a2.balance).max()) / fine.tau**2
        audits[repr(eps)] = dict(a1.to_json(), balance_constant=c1, balance_constant_half_step=c2)
        consts[eps] = (a1, c1, c2)
    out.ledgers["dissipation"] = audits
    out.check("balance_sign", max(a.max_balance_defect for a, _, _ in consts.values()), 0.0)
    out.check("balance_tau_squared", max(c2 / c1 for _, c1, c2 in consts.values()), 1.5)
    out.check("max_dissipation_margin", min(a.min_margin for a, _, _ in consts.values()), 0.0, upper=False)
    out.check("trajectory_equality", max(a.trajectory_equality for a, _, _ in consts.values()), 1e-10)
    out.plots["gaps"] = {f"eps={e:g}": (comp.times, g) for e, g in zip(comp.epsilons, comp.gap_curves)}
    return out


def random_density(grid, rng):
    """Random positive density: smooth bumps plus noise, bounded away from zero."""
    x = grid.coords
    vals = 0.05 + rng.random(grid.size)
    for _ in range(3):
        c = rng.random(grid.dim)
        vals += 2 * rng.random() * np.exp(-np.sum((x - c) ** 2, axis=1) / (2 * (0.05 + 0.2 * rng.random()) ** 2))
    return Density.from_values(grid, vals)


def exp_metric_axioms(cfg: ExperimentConfig) -> Artifacts:
    """Triangle inequality, symmetry and identity on random triples.

    Distances come from the exact LP; in 1D the closed form is compared too.
    """
    out = Artifacts()
    grid = build_grid(cfg)
    b = build_embedding(build_mobility(cfg, grid))
    C = cost_matrix(b)
    rng = np.random.default_rng(cfg.seed)
    triples = [tuple(random_density(grid, rng) for _ in range(3)) for _ in range(cfg["checks"]["triples"])]

    def lp(r0, r1):
        return solve_kantorovich_exact(r0, r1, C)[1].wa_squared

    def one(tri):
        p, q, r = tri
        d = {
            "pq": lp(p, q), "qr": lp(q, r), "pr": lp(p, r),
            "qp": lp(q, p), "pp": lp(p, p),
        }
        w = {k: np.sqrt(max(v, 0.0)) for k, v in d.items()}
        slack = w["pq"] + w["qr"] - w["pr"]
        sym = abs(w["pq"] - w["qp"])
        agree = abs(wa_distance_1d(p, q, b).wa_squared - d["pq"]) if grid.dim == 1 else 0.0
        return slack, sym, w["pp"], agree

    res = np.array(_pmap(one, triples))
    slack, sym, ident, agree = res.T
    passed = int(np.sum(slack >= -1e-7))
    out.ledgers["axioms"] = {
        "triples": len(triples),
        "triangle_pass_count": passed,
        "min_triangle_slack": float(slack.min()),
        "max_symmetry_defect": float(sym.max()),
        "max_self_distance": float(ident.max()),
        "max_closed_form_disagreement": float(agree.max()),
    }
    out.check("triangle", -float(slack.min()), 1e-7, note=f"{passed}/{len(triples)} triples")
    out.check("symmetry", float(sym.max()), 1e-9)
    out.check("identity", float(ident.max()), 1e-9)
    if grid.dim == 1:
        out.check("closed_form_agreement", float(agree.max()), 1e-8)
    out.plots["triangle_slack"] = {"slack": (np.arange(len(slack)), slack)}
    return out


PIPELINES = {
    "distance": exp_distance,
    "geodesic": exp_geodesic,
    "jko": exp_jko,
    "fv_reference": exp_fv_reference,
    "jko_vs_fv": exp_jko_vs_fv,
    "relaxation": exp_relaxation,
    "metric_axioms": exp_metric_axioms,
}


def run_experiment(cfg: ExperimentConfig) -> Artifacts:
    return PIPELINES[cfg.kind](cfg)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def emit_results(artifacts: Artifacts, outdir, cfg: ExperimentConfig | None = None, error: str | None = None):
    """Write the fixed layout and return the manifest dictionary.

    Layout: ``config.echo``, ``densities/*.csv``, ``ledgers/*.json``,
    ``plots/*.csv`` and ``MANIFEST.json`` with SHA-256 hashes of the rest.
    """
    written = []

    def target(*parts):
        p = os.path.join(outdir, *parts)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        written.append(os.path.join(*parts))
        return p

    try:
        os.makedirs(outdir, exist_ok=True)
        if cfg is not None:
            with open(target("config.echo"), "w") as fh:
                fh.write(emit_config(cfg))
        for name, rho in sorted(artifacts.densities.items()):
            write_density_csv(rho, target("densities", f"{name}.csv"))
        for name, obj in sorted(artifacts.ledgers.items()):
            write_json(obj, target("ledgers", f"{name}.json"))
        for name, series in sorted(artifacts.plots.items()):
            write_long_csv(series, target("plots", f"{name}.csv"))
        passed = artifacts.passed and error is None
        manifest = {
            "experiment": None if cfg is None else cfg.kind,
            "seed": None if cfg is None else cfg.seed,
            "passed": passed,
            "error": error,
            "failures": sorted(k for k, c in artifacts.checks.items() if not c.passed),
            "checks": {k: c.to_json() for k, c in sorted(artifacts.checks.items())},
            "files": {p: _sha256(os.path.join(outdir, p)) for p in sorted(written)},
        }
        write_json(manifest, os.path.join(outdir, "MANIFEST.json"))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write results: {exc.strerror}", exc.filename) from None
    return manifest
