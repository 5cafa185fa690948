"""Experiment drivers comparing the particle systems with their macroscopic limits.

Work items are independent ``(N, replica, point)`` tuples; they are fanned
out to a process pool when ``workers > 1`` and aggregated in a fixed order,
so results never depend on the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .config import ExperimentConfig
from .flux import FluxTable
from .geometry import LatticeDomain, PerturbedDomain, discretize, two_sided_reservoir
from .hydrostatics import bulk_density, perturbed_domain_prediction, phase_diagram
from .pde import entropy_audit, solve_ibvp
from .report import ExperimentResult
from .simulator import (
    cell_values,
    init_coupled,
    init_from_profile,
    kruzkov_monitor,
    order_sign_for,
    region_density,
    run,
    run_coupled,
    stationary_profile,
)

REPLICA_STRIDE = 1_000_003


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, *zip(*items)))
    return [fn(*it) for it in items]


def flux_for(cfg: ExperimentConfig) -> FluxTable:
    """Normal flux of the configured model along the slab normal."""
    dom = cfg.domain()
    rho_max = cfg.section("pde").get("rho_max")
    return FluxTable.for_model(cfg.model, np.asarray(dom.normal, dtype=float),
                               None if rho_max is None else float(rho_max))


def lattice_for(cfg: ExperimentConfig, N: int, lam_a: float, lam_b: float) -> LatticeDomain:
    spec = cfg.model
    lat = discretize(cfg.domain(), N, spec.range_, cfg.width)
    return two_sided_reservoir(lat, lam_a, lam_b, spec.capacity)


def project_cells(values: np.ndarray, edges: np.ndarray, origin: float, delta: float, n_cells: int) -> np.ndarray:
    """Averages of a piecewise-constant function over cells ``[origin + i delta, origin + (i+1) delta)``.

    The function is taken as zero outside ``[edges[0], edges[-1]]``.
    """
    cum = np.concatenate([[0.0], np.cumsum(values * np.diff(edges))])
    cut = origin + delta * np.arange(n_cells + 1)
    F = np.interp(cut, edges, cum, left=0.0, right=cum[-1])
    return np.diff(F) / delta


# ---------------------------------------------------------- hydrodynamics


@dataclass(frozen=True)
class ConvergenceRow:
    """L1 distance of the replica-averaged empirical profile from the PDE solution.

    ``mean_replica_l1`` is the average of the single-replica distances,
    which is dominated by sampling noise at small cell widths.
    """

    N: int
    t: float
    l1: float
    stderr: float
    mean_replica_l1: float
    replicas: int

    def __post_init__(self):
        if self.l1 < 0 or self.mean_replica_l1 < 0:
            raise ValueError("distances must be nonnegative")


def _hydro_replica(spec, lattice, rho0, times, delta, seed, replica):
    state = init_from_profile(lattice, rho0, (seed, replica), spec)
    out = []
    for t in times:
        run(state, spec, lattice, t)
        out.append(cell_values(lattice, state.eta, delta)[1])
    return np.array(out), state.ledger()


def _window_mask(centers: np.ndarray, delta: float, lo: float, hi: float) -> np.ndarray:
    return (centers - 0.5 * delta >= lo - 1e-12) & (centers + 0.5 * delta <= hi + 1e-12)


def run_hydrodynamic_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Empirical profiles against the Godunov solution of the same boundary value problem."""
    spec = cfg.model
    dom = cfg.domain()
    if isinstance(dom, PerturbedDomain):
        raise ValueError("hydrodynamic comparison needs a plain slab")
    la, lb = cfg.lam_a, cfg.lam_b
    times = sorted(cfg.times)
    delta = cfg.delta
    flux = flux_for(cfg)
    rho0 = cfg.initial()
    pde = cfg.pde
    traj = solve_ibvp(rho0, la, lb, flux, times[-1], pde["dx"], pde["cfl"], dom.a, dom.b, times)
    win = cfg.section("run").get("window", [dom.a, dom.b])
    lo, hi = float(win[0]), float(win[1])
    R = cfg.replicas

    rows, ledgers, plots = [], {}, {}
    for N in cfg.N_list:
        lat = lattice_for(cfg, N, la, lb)
        items = [(spec, lat, rho0, times, delta, cfg.seed, N * REPLICA_STRIDE + r) for r in range(R)]
        res = _map(_hydro_replica, items, cfg.workers)
        emp = np.array([r[0] for r in res])  # replicas x times x cells
        ledgers[N] = [r[1] for r in res]
        origin = float(dom.a_outer)
        n_cells = emp.shape[2]
        centers = origin + delta * (np.arange(n_cells) + 0.5)
        mask = _window_mask(centers, delta, lo, hi)
        for k, t in enumerate(times):
            ref = project_cells(traj.at(t), traj.edges, origin, delta, n_cells)
            mean = emp[:, k].mean(axis=0)
            l1 = float(np.sum(np.abs(mean - ref)[mask]) * delta)
            single = np.sum(np.abs(emp[:, k] - ref)[:, mask], axis=1) * delta
            if R > 1:
                # jackknife over replicas
                loo = (emp[:, k].sum(axis=0)[None, :] - emp[:, k]) / (R - 1)
                jk = np.sum(np.abs(loo - ref)[:, mask], axis=1) * delta
                se = float(math.sqrt((R - 1) / R * np.sum((jk - jk.mean()) ** 2)))
                cell_se = emp[:, k].std(axis=0, ddof=1) / math.sqrt(R)
            else:
                se = math.nan
                cell_se = np.full(n_cells, math.nan)
            rows.append(ConvergenceRow(N, float(t), l1, se, float(single.mean()), R))
            plots[f"profile_N{N}_t{t:g}"] = (centers, mean, cell_se)
            plots.setdefault(f"pde_t{t:g}", (centers, ref, np.zeros(n_cells)))

    checks = {}
    tol = cfg.tolerances
    for t in times:
        seq = [r.l1 for r in rows if r.t == t]
        checks[f"monotone_t{t:g}"] = bool(all(x > y for x, y in zip(seq, seq[1:])))
        if "l1_max" in tol:
            checks[f"final_below_t{t:g}"] = bool(seq[-1] < tol["l1_max"])
    for t in times:
        pts = [r for r in rows if r.t == t]
        plots[f"l1_t{t:g}"] = (np.array([r.N for r in pts], float), np.array([r.l1 for r in pts]),
                               np.array([r.stderr for r in pts]))
    table = (["N", "t", "l1", "stderr", "mean_replica_l1", "replicas"],
             [[r.N, r.t, r.l1, r.stderr, r.mean_replica_l1, r.replicas] for r in rows])
    bal = all(all(l["balanced"] for l in ls) for ls in ledgers.values())
    checks["ledger_balanced"] = bool(bal)
    return ExperimentResult("hydro-convergence", {"convergence": table}, plots,
                            {"rows": [r.__dict__ for r in rows]}, checks, extra={"rows": rows})


# ------------------------------------------------------------ hydrostatics


@dataclass(frozen=True)
class HydrostaticRow:
    lam_a: float
    lam_b: float
    N: int
    label: str
    predicted: float | None
    bulk: float
    stderr: float
    nonstationary: bool
    collar: float | None = None
    collar_band: tuple | None = None


def _central_third(lattice: LatticeDomain, dom) -> Callable:
    lo = dom.a + (dom.b - dom.a) / 3
    hi = dom.a + 2 * (dom.b - dom.a) / 3
    normal = np.asarray(dom.normal, dtype=float)
    return lambda p: (p @ normal >= lo) & (p @ normal <= hi)


def _collar(dom) -> Callable:
    normal = np.asarray(dom.normal, dtype=float)
    return lambda p: (p @ normal <= dom.a) & dom.contains(p)


def _region_stats(lattice, site_means, predicate):
    vals = np.array([region_density(lattice, m, predicate) for m in site_means])
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.nan
    return float(vals.mean()), se


def run_hydrostatic_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Time-averaged bulk density on the central third against the variational bulk value."""
    spec = cfg.model
    dom = cfg.domain()
    flux = flux_for(cfg)
    rc = cfg.section("run")
    burn = float(rc.get("burn_in", 2.0))
    horizon = float(rc.get("horizon", 4.0))
    tol = cfg.tolerances
    tol_bulk = tol.get("bulk", 0.03)
    tol_collar = tol.get("collar", 0.04)
    perturbed = isinstance(dom, PerturbedDomain)

    rows: list[HydrostaticRow] = []
    plots = {}
    checks = {}
    for i, (la, lb) in enumerate(cfg.points):
        ph = bulk_density(flux, la, lb)
        init = cfg.initial(la, lb)
        for N in cfg.N_list:
            lat = lattice_for(cfg, N, la, lb)
            est = stationary_profile(spec, lat, burn, horizon, cfg.replicas,
                                     cfg.seed + REPLICA_STRIDE * (i + 1) + N, cfg.delta, init, cfg.workers)
            bulk, se = _region_stats(lat, est.site_means, _central_third(lat, dom.inner if perturbed else dom))
            collar = band = None
            key = f"p{i}_N{N}"
            if ph.bulk is not None:
                checks[f"bulk_{key}"] = bool(abs(bulk - ph.bulk) <= tol_bulk)
            if perturbed:
                pred = perturbed_domain_prediction(flux, la, lb, dom)
                collar, _ = _region_stats(lat, est.site_means, _collar(dom))
                band = pred.collar_a
                checks[f"collar_{key}"] = bool(band[0] - tol_collar <= collar <= band[1] + tol_collar)
            checks[f"stationary_{key}"] = not est.profile.nonstationary
            rows.append(HydrostaticRow(la, lb, N, ph.label, ph.bulk, bulk, se, est.profile.nonstationary,
                                       collar, band))
            p = est.profile
            plots[f"stationary_{key}"] = (p.centers, p.values, p.stderr)

    def fmt(v):
        return "" if v is None else v

    table = (["lambda_a", "lambda_b", "N", "label", "predicted", "bulk", "stderr", "nonstationary",
              "collar", "collar_lo", "collar_hi"],
             [[r.lam_a, r.lam_b, r.N, r.label, fmt(r.predicted), r.bulk, r.stderr, int(r.nonstationary),
               fmt(r.collar), fmt(r.collar_band and r.collar_band[0]), fmt(r.collar_band and r.collar_band[1])]
              for r in rows])
    return ExperimentResult("hydrostatic", {"bulk": table}, plots, {}, checks, extra={"rows": rows})


# ----------------------------------------------------------- coupling audit


@dataclass(frozen=True)
class PairRun:
    name: str
    c: float
    events: int
    order_violations: int
    balanced: bool


def _coupled_until(name, spec, lattice, rho0, c, seed, replica, target: int, dt: float) -> PairRun:
    state = init_coupled(lattice, rho0, c, (seed, replica), spec)
    if order_sign_for(state, lattice, c) == 0:
        raise ValueError(f"{name} pair does not start ordered")
    t = 0.0
    while state.ledger()["events"] < target:
        t += dt
        run_coupled(state, spec, lattice, c, t, check_order=True, strict=False)
    led = state.ledger()
    return PairRun(name, c, led["events"], led["order_violations"], led["balanced"])


def _probe_replica(spec, lattice, c, horizon, seed, replica, probes):
    state = init_coupled(lattice, 0.5 * (lattice.lam.min() + lattice.lam.max()), c, (seed, replica), spec)
    run_coupled(state, spec, lattice, c, horizon, check_order=False)
    return state.xi[probes].astype(float)


def run_coupling_audit(cfg: ExperimentConfig) -> ExperimentResult:
    """Order preservation, domination, stationarity of the ``c`` marginal and the Kruzkov monitor.

    Two ordered pairs are run: the open process against the uniform
    reservoir at the smallest boundary density (``xi <= eta`` must hold)
    and against the largest one (``eta <= xi``, i.e. domination by the
    invariant measure at that density).
    """
    spec = cfg.model
    ac = cfg.section("audit")
    la, lb = cfg.lam_a, cfg.lam_b
    N = cfg.N_list[0]
    lat = lattice_for(cfg, N, la, lb)
    target = int(float(ac.get("events", 1e6)))
    dt = float(ac.get("chunk", 0.5))
    rho0 = cfg.initial()
    lo, hi = min(la, lb), max(la, lb)
    pairs = [("order", lo), ("domination", hi)]
    runs = [_coupled_until(name, spec, lat, rho0, c, cfg.seed, 10 + k, target, dt)
            for k, (name, c) in enumerate(pairs)]

    # marginal stationarity of xi under reservoir c
    c = float(ac.get("c", 0.5 * (la + lb)))
    R = int(ac.get("replicas", cfg.replicas))
    horizon = float(ac.get("horizon", 0.5))
    n_probe = int(ac.get("probes", 5))
    probes = np.linspace(0, lat.n_sites - 1, n_probe + 2).round().astype(np.int64)[1:-1]
    items = [(spec, lat, c, horizon, cfg.seed, 1000 + r, probes) for r in range(R)]
    samples = np.array(_map(_probe_replica, items, cfg.workers))
    means = samples.mean(axis=0)
    ses = samples.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.full(n_probe, math.nan)
    z = np.where(ses > 0, np.abs(means - c) / np.where(ses > 0, ses, 1.0), np.where(means == c, 0.0, np.inf))

    # Kruzkov monitor time series for an ordered pair started from the same datum
    series = _monitor_series(spec, lat, rho0, c, cfg.seed, ac)

    checks = {f"{r.name}_violations": r.order_violations == 0 for r in runs}
    checks.update({f"{r.name}_balanced": r.balanced for r in runs})
    checks.update({f"probe_{i}_within_3se": bool(z[i] <= 3.0) for i in range(n_probe)})
    pair_table = (["pair", "c", "events", "order_violations", "balanced"],
                  [[r.name, r.c, r.events, r.order_violations, int(r.balanced)] for r in runs])
    probe_table = (["site", "mean", "stderr", "c", "z"],
                   [[int(p), float(m), float(s), c, float(zz)] for p, m, s, zz in zip(probes, means, ses, z)])
    mon_table = (["t", "phi_plus", "phi_minus"], [list(row) for row in series])
    plots = {"monitor_plus": (series[:, 0], series[:, 1], np.zeros(len(series))),
             "monitor_minus": (series[:, 0], series[:, 2], np.zeros(len(series)))}
    return ExperimentResult("couple-audit", {"pairs": pair_table, "probes": probe_table, "monitor": mon_table},
                            plots, {}, checks, extra={"runs": runs, "means": means, "stderr": ses})


def _monitor_series(spec, lat, rho0, c, seed, ac) -> np.ndarray:
    steps = int(ac.get("monitor_steps", 10))
    t_end = float(ac.get("monitor_horizon", 0.5))
    state = init_coupled(lat, rho0, c, (seed, 7), spec)
    dom = lat.domain
    mid, half = 0.5 * (dom.a + dom.b), 0.5 * (dom.b - dom.a)
    normal = np.asarray(dom.normal, dtype=float)

    def phi(p):
        z = (p @ normal - mid) / half
        return np.where(np.abs(z) < 1, (1 - z * z) ** 2, 0.0)

    out = []
    for k in range(steps + 1):
        t = t_end * k / steps
        if k:
            run_coupled(state, spec, lat, c, t, check_order=False)
        out.append((t, kruzkov_monitor(state, phi, 1), kruzkov_monitor(state, phi, -1)))
    return np.array(out)


# ----------------------------------------------------- single simulations


def run_simulation(cfg: ExperimentConfig) -> ExperimentResult:
    """Replica-averaged empirical profiles at the configured times, no comparison."""
    spec = cfg.model
    la, lb = cfg.lam_a, cfg.lam_b
    times = sorted(cfg.times)
    rho0 = cfg.initial()
    plots, rows = {}, []
    for N in cfg.N_list:
        lat = lattice_for(cfg, N, la, lb)
        items = [(spec, lat, rho0, times, cfg.delta, cfg.seed, N * REPLICA_STRIDE + r) for r in range(cfg.replicas)]
        res = _map(_hydro_replica, items, cfg.workers)
        emp = np.array([r[0] for r in res])
        origin = float(lat.domain.a_outer)
        centers = origin + cfg.delta * (np.arange(emp.shape[2]) + 0.5)
        for k, t in enumerate(times):
            mean = emp[:, k].mean(axis=0)
            se = emp[:, k].std(axis=0, ddof=1) / math.sqrt(cfg.replicas) if cfg.replicas > 1 else np.zeros_like(mean)
            plots[f"profile_N{N}_t{t:g}"] = (centers, mean, se)
            rows += [[N, t, i, float(c), float(v), float(s)] for i, (c, v, s) in enumerate(zip(centers, mean, se))]
        checks_bal = all(r[1]["balanced"] for r in res)
    table = (["N", "t", "cell_index", "x", "density", "stderr"], rows)
    return ExperimentResult("simulate", {"profiles": table}, plots, {}, {"ledger_balanced": bool(checks_bal)})


def run_pde(cfg: ExperimentConfig) -> ExperimentResult:
    """Godunov solution with mass balance and the entropy audit."""
    dom = cfg.domain()
    flux = flux_for(cfg)
    rho0 = cfg.initial()
    times = sorted(cfg.times)
    pde = cfg.pde
    traj = solve_ibvp(rho0, cfg.lam_a, cfg.lam_b, flux, times[-1], pde["dx"], pde["cfl"], dom.a, dom.b, times)
    rep = entropy_audit(traj)
    rows = [[t, float(x), float(v)] for t in times for x, v in zip(traj.centers, traj.at(t))]
    plots = {f"pde_t{t:g}": (traj.centers, traj.at(t), np.zeros(traj.centers.size)) for t in times}
    checks = {"entropy_audit": rep.passed}
    summary = {"worst_scaled_residual": rep.worst_scaled, "steps": int(traj.times.size - 1)}
    return ExperimentResult("solve", {"solution": (["t", "x_center", "u"], rows)}, plots, summary, checks,
                            extra={"trajectory": traj, "audit": rep})


def run_phases(cfg: ExperimentConfig) -> ExperimentResult:
    """Phase diagram of the configured flux on a square grid of boundary densities."""
    flux = flux_for(cfg)
    res = int(cfg.section("phases").get("resolution", 200))
    diag = phase_diagram(flux, res)
    summary = {"regions": dict(sorted(diag.regions.items())), "n_phases": diag.n_phases}
    checks = {}
    want = cfg.tolerances.get("phases")
    if want is not None:
        checks["phase_count"] = diag.n_phases == int(want)
    return ExperimentResult("phases", {"diagram": diag.to_csv()}, {}, summary, checks, extra={"diagram": diag})


RUNNERS = {
    "simulate": run_simulation,
    "solve": run_pde,
    "hydrostatic": run_hydrostatic_experiment,
    "phases": run_phases,
    "couple-audit": run_coupling_audit,
    "hydro-convergence": run_hydrodynamic_experiment,
}


def run_experiment(cfg: ExperimentConfig, kind: str | None = None) -> ExperimentResult:
    return RUNNERS[kind or cfg.kind](cfg)
