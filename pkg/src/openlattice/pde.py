"""Godunov finite volumes for ``u_t + f(u)_x = 0`` on ``(a, b)`` with boundary data, and entropy audits.

The boundary data enter through ghost cells, so the scheme realises the
boundary condition in its weak (entropy) form.  A trajectory keeps the
whole space-time history so that Kruzkov-type inequalities can be
evaluated on it afterwards.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .flux import FluxTable, godunov_flux

MAX_CFL = 0.9
MASS_TOL = 1e-12
MP_TOL = 1e-12
M_INFLATE = 1.1
N_C = 33
AUDIT_KAPPA = 2.0


class MaximumPrincipleViolation(AssertionError):
    pass


class MassBalanceError(AssertionError):
    pass


@dataclass
class Trajectory:
    """Piecewise-constant space-time solution.

    ``u[n]`` holds the cell values on ``[times[n], times[n+1])``; the last
    row is the state at ``times[-1]``.  ``boundary_flux[n]`` are the
    Godunov fluxes through ``a`` and ``b`` during step ``n``.
    """

    edges: np.ndarray
    times: np.ndarray
    u: np.ndarray
    lam_a: float
    lam_b: float
    flux: FluxTable = field(repr=False)
    boundary_flux: np.ndarray | None = None

    @property
    def dx(self) -> float:
        return float(self.edges[1] - self.edges[0])

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def a(self) -> float:
        return float(self.edges[0])

    @property
    def b(self) -> float:
        return float(self.edges[-1])

    @property
    def final(self) -> np.ndarray:
        return self.u[-1]

    def mass(self) -> np.ndarray:
        return self.u.sum(axis=1) * self.dx

    def at(self, t: float) -> np.ndarray:
        """Cell values at time ``t``: exact on step times, linear in between."""
        k = int(np.searchsorted(self.times, t, side="left"))
        if k < self.times.size and abs(self.times[k] - t) <= 1e-12 * max(1.0, abs(t)):
            return self.u[k]
        if k == 0 or k >= self.times.size:
            raise ValueError(f"time {t} outside [{self.times[0]}, {self.times[-1]}]")
        t0, t1 = self.times[k - 1], self.times[k]
        w = (t - t0) / (t1 - t0)
        return (1 - w) * self.u[k - 1] + w * self.u[k]

    def to_csv(self, times: Sequence[float]) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x_center", "u"])
        for t in times:
            for x, v in zip(self.centers, self.at(t)):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_function(cls, u_fn: Callable, a: float, b: float, n_cells: int, times, lam_a, lam_b,
                      flux: FluxTable) -> "Trajectory":
        """Sample ``u_fn(t, x)`` at cell centers and step midpoints (for audits of given solutions)."""
        edges = np.linspace(a, b, n_cells + 1)
        xc = 0.5 * (edges[:-1] + edges[1:])
        times = np.asarray(times, dtype=float)
        mids = np.append(0.5 * (times[:-1] + times[1:]), times[-1])
        u = np.array([np.asarray(u_fn(t, xc), dtype=float) for t in mids])
        return cls(edges, times, u, float(lam_a), float(lam_b), flux)


def cell_averages(rho0, edges: np.ndarray, sub: int = 16) -> np.ndarray:
    """Averages of ``rho0`` over cells by the midpoint rule on ``sub`` sub-cells."""
    if not callable(rho0):
        return np.full(edges.size - 1, float(rho0))
    dx = np.diff(edges)
    offs = (np.arange(sub) + 0.5) / sub
    pts = edges[:-1, None] + dx[:, None] * offs[None, :]
    vals = np.asarray(rho0(pts.reshape(-1)), dtype=float).reshape(pts.shape)
    return vals.mean(axis=1)


def solve_ibvp(rho0, lam_a: float, lam_b: float, flux: FluxTable, t_end: float, dx: float,
               cfl: float = 0.5, a: float = 0.0, b: float = 1.0, times: Sequence[float] = (),
               M: float | None = None) -> Trajectory:
    """Explicit Godunov scheme with ghost values ``lam_a``, ``lam_b``.

    ``dt = cfl * dx / M`` with ``M`` the flux Lipschitz bound.  Steps are
    shortened so that every requested time (and ``t_end``) is hit exactly.
    Mass balance and the discrete maximum principle are checked each step.
    """
    if not 0 < cfl <= MAX_CFL:
        raise ValueError(f"CFL number {cfl} outside (0, {MAX_CFL}]")
    n = int(round((b - a) / dx))
    if n < 2 or not math.isclose(n * dx, b - a, rel_tol=1e-9):
        raise ValueError("dx must divide the interval")
    edges = np.linspace(a, b, n + 1)
    u = cell_averages(rho0, edges)
    top = flux.rho_max
    for v in (lam_a, lam_b):
        if not 0 <= v <= top:
            raise ValueError(f"boundary density {v} outside [0, {top}]")
    if np.any(u < 0) or np.any(u > top):
        raise ValueError("initial datum outside the flux range")
    M = flux.lipschitz if M is None else float(M)
    if M < flux.lipschitz:
        raise ValueError("M below the flux Lipschitz constant violates the CFL condition")
    dt_max = cfl * dx / M if M > 0 else t_end
    lo = min(u.min(), lam_a, lam_b) - MP_TOL
    hi = max(u.max(), lam_a, lam_b) + MP_TOL
    stops = sorted({float(t) for t in times if 0 < t < t_end} | {float(t_end)})
    hist = [u.copy()]
    ts = [0.0]
    bflux = []
    t = 0.0
    ratio = 0.0
    for stop in stops:
        while t < stop - 1e-14 * max(1.0, stop):
            dt = min(dt_max, stop - t)
            ext = np.concatenate([[lam_a], u, [lam_b]])
            G = godunov_flux(ext[:-1], ext[1:], flux)
            ratio = dt / dx
            u = u - ratio * (G[1:] - G[:-1])
            if u.min() < lo or u.max() > hi:
                raise MaximumPrincipleViolation(f"cell value left [{lo}, {hi}] at t={t + dt:.6g}")
            bflux.append((G[0], G[-1]))
            t = stop if stop - (t + dt) <= 1e-14 * max(1.0, stop) else t + dt
            hist.append(u.copy())
            ts.append(t)
    traj = Trajectory(edges, np.array(ts), np.array(hist), float(lam_a), float(lam_b), flux,
                      np.array(bflux).reshape(-1, 2))
    check_mass_balance(traj)
    return traj


def check_mass_balance(traj: Trajectory, tol: float = MASS_TOL) -> float:
    """Largest gap between mass change and integrated boundary fluxes; raises above ``tol``."""
    mass = traj.mass()
    dts = np.diff(traj.times)
    inflow = np.concatenate([[0.0], np.cumsum(dts * (traj.boundary_flux[:, 0] - traj.boundary_flux[:, 1]))])
    gap = float(np.abs(mass - mass[0] - inflow).max())
    scale = max(1.0, float(np.abs(mass).max()))
    if gap > tol * scale:
        raise MassBalanceError(f"mass balance off by {gap:.3e}")
    return gap


def l1_distance(u: np.ndarray, v: np.ndarray, dx: float) -> float:
    return float(np.abs(np.asarray(u) - np.asarray(v)).sum() * dx)


def positive_part_l1(u: np.ndarray, v: np.ndarray, dx: float) -> float:
    return float(np.maximum(np.asarray(u) - np.asarray(v), 0.0).sum() * dx)


# ---------------------------------------------------------------- slabs


@dataclass
class SlabSolution:
    """One-dimensional solution lifted to the slab, ``rho(t, x) = u(t, n . x)``."""

    normal: np.ndarray
    trajectory: Trajectory

    def evaluate(self, t: float, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        s = pts @ self.normal
        tr = self.trajectory
        idx = np.clip(np.floor((s - tr.a) / tr.dx).astype(int), 0, tr.centers.size - 1)
        return tr.at(t)[idx]


def solve_slab(rho0: Callable, lam_a: float, lam_b: float, h: Callable, normal, a: float, b: float,
               t_end: float, dx: float, cfl: float = 0.5, rho_max: float = 1.0, times=(),
               check_points: int = 64, seed: int = 0) -> SlabSolution:
    """Solve on the slab ``{a < n.x < b}`` for data depending on ``n.x`` only.

    ``h`` maps densities (array) to flux vectors (array with a trailing
    dimension ``d``); ``rho0`` maps points of shape ``(M, d)`` to densities.
    """
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    d = n.size
    rng = np.random.default_rng(seed)
    s = rng.uniform(a, b, check_points)
    # two points on each hyperplane, differing by a random tangential shift
    shift = rng.normal(size=(check_points, d))
    shift -= (shift @ n)[:, None] * n[None, :]
    p1 = s[:, None] * n[None, :]
    p2 = p1 + shift
    if not np.allclose(np.asarray(rho0(p1)), np.asarray(rho0(p2)), atol=1e-12):
        raise ValueError("initial datum is not constant on hyperplanes orthogonal to the normal")
    f = lambda r: np.asarray(h(np.asarray(r, dtype=float))) @ n  # noqa: E731
    table = FluxTable.from_function(f, rho_max)
    rho1 = lambda y: np.asarray(rho0(np.asarray(y)[:, None] * n[None, :]))  # noqa: E731
    traj = solve_ibvp(rho1, lam_a, lam_b, table, t_end, dx, cfl, a, b, times)
    return SlabSolution(n, traj)


# ---------------------------------------------------------------- audits


def kruzkov_pair(flux: FluxTable, c: float, sign: int):
    """Entropy ``(u - c)^{+/-}`` and its flux, as vectorised callables."""
    fc = flux(c)
    if sign > 0:
        return (lambda u: np.maximum(u - c, 0.0),
                lambda u: np.where(u > c, flux(u) - fc, 0.0))
    return (lambda u: np.maximum(c - u, 0.0),
            lambda u: np.where(u < c, -(flux(u) - fc), 0.0))


def _bump(z):
    z = np.asarray(z, dtype=float)
    return np.where(np.abs(z) < 1, (1 - z * z) ** 2, 0.0)


@dataclass(frozen=True)
class SpaceFunction:
    """``chi(x) = bump((x - center) / width)``."""

    center: float
    width: float

    def __call__(self, x):
        return _bump((np.asarray(x) - self.center) / self.width)

    def deriv(self, x):
        z = (np.asarray(x) - self.center) / self.width
        return np.where(np.abs(z) < 1, -4 * z * (1 - z * z) / self.width, 0.0)

    @property
    def name(self) -> str:
        return f"x{self.center:.4g}w{self.width:.4g}"


@dataclass(frozen=True)
class TimeFunction:
    """``tau(t) = (1 - t/T)^2`` on ``[0, T]`` (``center=None``) or a bump around ``center``."""

    T: float
    center: float | None = None

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.center is None:
            return np.where(t < self.T, (1 - t / self.T) ** 2, 0.0)
        return _bump((t - self.center) / self.T)

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        if self.center is None:
            return np.where(t < self.T, -2 * (1 - t / self.T) / self.T, 0.0)
        z = (t - self.center) / self.T
        return np.where(np.abs(z) < 1, -4 * z * (1 - z * z) / self.T, 0.0)

    @property
    def name(self) -> str:
        return f"T{self.T:.4g}" if self.center is None else f"t{self.center:.4g}w{self.T:.4g}"


_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)


def _integrals(fn, edges) -> np.ndarray:
    """Gauss-Legendre integrals of ``fn`` over each interval of ``edges``."""
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    pts = mid[:, None] + half[:, None] * _GL_X[None, :]
    return (fn(pts) * _GL_W[None, :]).sum(axis=1) * half


def default_space_family(a: float, b: float, eps: float | None = None) -> list[SpaceFunction]:
    L = b - a
    eps = 0.1 * L if eps is None else eps
    fam = []
    for frac in (0.05, 0.1, 0.2, 0.4):
        w = frac * L
        k = int(math.ceil((L + 2 * eps) / (0.5 * w)))
        for c in np.linspace(a - eps, b + eps, k + 1):
            fam.append(SpaceFunction(float(c), w))
    fam.append(SpaceFunction(0.5 * (a + b), 2 * L))
    return fam


def default_time_family(t_end: float) -> list[TimeFunction]:
    fam = [TimeFunction(t_end * s) for s in (0.25, 0.5, 1.0)]
    for w in (0.1, 0.25):
        for c in np.linspace(w, 1 - w, 5):
            fam.append(TimeFunction(w * t_end, c * t_end))
    return fam


@dataclass
class EntropyReport:
    """Residuals of the discrete entropy inequalities; nonnegative means satisfied.

    ``residuals[s, k, p]`` is for sign ``signs[s]``, level ``c_grid[k]`` and
    test function ``phi_names[p]``; ``tolerances[p]`` the pass threshold.
    """

    c_grid: np.ndarray
    phi_names: list
    residuals: np.ndarray
    tolerances: np.ndarray
    M: float
    signs: tuple = (1, -1)

    @property
    def worst(self) -> float:
        return float(self.residuals.min())

    @property
    def worst_scaled(self) -> float:
        """Most negative residual relative to its tolerance."""
        return float((self.residuals / self.tolerances[None, None, :]).min())

    @property
    def passed(self) -> bool:
        return bool(np.all(self.residuals >= -self.tolerances[None, None, :]))

    def worst_case(self) -> tuple:
        s, k, p = np.unravel_index(np.argmin(self.residuals / self.tolerances[None, None, :]),
                                   self.residuals.shape)
        return self.signs[s], float(self.c_grid[k]), self.phi_names[p], float(self.residuals[s, k, p])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sign", "c", "phi_id", "residual"])
        for s, sg in enumerate(self.signs):
            for k, c in enumerate(self.c_grid):
                for p, name in enumerate(self.phi_names):
                    w.writerow(["+" if sg > 0 else "-", repr(float(c)), name, repr(float(self.residuals[s, k, p]))])
        return buf.getvalue()


def default_c_grid(traj_or_values, lam_a, lam_b, n: int = N_C) -> np.ndarray:
    vals = np.asarray(traj_or_values, dtype=float)
    lo = min(vals.min(), lam_a, lam_b)
    hi = max(vals.max(), lam_a, lam_b)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.05, hi + 0.05
    pad = 0.02 * (hi - lo)
    return np.linspace(lo - pad, hi + pad, n)


def entropy_audit(traj: Trajectory, flux: FluxTable | None = None, c_grid=None, space=None, time=None,
                  M: float | None = None, kappa: float = AUDIT_KAPPA) -> EntropyReport:
    """Evaluate the entropy inequality with boundary penalty on a space-time trajectory.

    The solution is taken piecewise constant in space and time; for a test
    function ``tau(t) chi(x)`` the residual is

        sum eta(u) dtau X + sum T q(u) dchi + M sum T [chi(a) eta(lam_a) + chi(b) eta(lam_b)]
        + tau(0) sum eta(u0) X,

    with ``X``, ``T`` the integrals of ``chi``, ``tau`` over cells and steps.
    The tolerance is ``kappa (dx + dt)`` times the size of the four terms.
    """
    flux = flux or traj.flux
    M = M_INFLATE * flux.lipschitz if M is None else float(M)
    t_end = float(traj.times[-1])
    space = space or default_space_family(traj.a, traj.b)
    time = time or default_time_family(t_end)
    c_grid = default_c_grid(traj.u, traj.lam_a, traj.lam_b) if c_grid is None else np.asarray(c_grid, dtype=float)
    tedges = traj.times
    steps = traj.u[:-1]
    dts = np.diff(tedges)
    X = np.array([_integrals(ch, traj.edges) for ch in space]).T  # cells x chi
    D = np.array([ch(traj.edges[1:]) - ch(traj.edges[:-1]) for ch in space]).T
    chi_a = np.array([ch(traj.a) for ch in space])
    chi_b = np.array([ch(traj.b) for ch in space])
    tau_vals = np.array([tf(tedges) for tf in time])  # tau x times
    dtau = np.diff(tau_vals, axis=1).T  # steps x tau
    Tint = np.array([_integrals(tf, tedges) for tf in time]).T  # steps x tau
    tau0 = tau_vals[:, 0]
    # size of each term, for the tolerance
    Xabs = np.array([_integrals(lambda x, ch=ch: np.abs(ch.deriv(x)), traj.edges).sum() for ch in space])
    Xint = X.sum(axis=0)
    dtau_abs = np.array([_integrals(lambda t, tf=tf: np.abs(tf.deriv(t)), tedges).sum() for tf in time])
    Ttot = Tint.sum(axis=0)
    span = max(np.abs(c_grid).max(), np.abs(traj.u).max(), flux.rho_max)
    fsup = flux.sup_norm + flux.lipschitz * span
    size = (np.outer(dtau_abs, Xint) * span + np.outer(Ttot, Xabs) * fsup
            + M * np.outer(Ttot, chi_a + chi_b) * span + np.outer(tau0, Xint) * span)
    h = traj.dx + float(dts.max())
    tol = (kappa * h * size).reshape(-1)
    names = [f"{tf.name}|{ch.name}" for tf in time for ch in space]
    res = np.empty((2, c_grid.size, len(names)))
    for s, sg in enumerate((1, -1)):
        for k, c in enumerate(c_grid):
            eta, q = kruzkov_pair(flux, c, sg)
            E = eta(steps)
            Q = q(steps)
            r = dtau.T @ E @ X + Tint.T @ Q @ D
            bd = eta(traj.lam_a) * chi_a + eta(traj.lam_b) * chi_b
            r = r + M * np.outer(Ttot, bd)
            r = r + np.outer(tau0, eta(traj.u[0]) @ X)
            res[s, k] = r.reshape(-1)
    return EntropyReport(c_grid, names, res, np.maximum(tol, 1e-14), M)


def stationary_audit(breakpoints, values, lam_a: float, lam_b: float, flux: FluxTable, c_grid=None,
                     space=None, M: float | None = None, tol: float = 1e-12) -> EntropyReport:
    """Spatial-only entropy inequality for a step profile, integrated exactly.

    For ``rho = sum rho_k 1_(x_k, x_{k+1})`` the residual is
    ``sum_k q(rho_k) (chi(x_{k+1}) - chi(x_k)) + M (chi(a) eta(lam_a) + chi(b) eta(lam_b))``.
    """
    x = np.asarray(breakpoints, dtype=float)
    v = np.asarray(values, dtype=float)
    if x.size != v.size + 1 or np.any(np.diff(x) <= 0):
        raise ValueError("need increasing breakpoints, one more than values")
    M = M_INFLATE * flux.lipschitz if M is None else float(M)
    a, b = float(x[0]), float(x[-1])
    space = space or default_space_family(a, b)
    c_grid = default_c_grid(v, lam_a, lam_b) if c_grid is None else np.asarray(c_grid, dtype=float)
    chi_x = np.array([ch(x) for ch in space])  # chi x breakpoints
    dchi = np.diff(chi_x, axis=1)
    res = np.empty((2, c_grid.size, len(space)))
    for s, sg in enumerate((1, -1)):
        for k, c in enumerate(c_grid):
            eta, q = kruzkov_pair(flux, c, sg)
            r = dchi @ q(v) + M * (chi_x[:, 0] * eta(lam_a) + chi_x[:, -1] * eta(lam_b))
            res[s, k] = r
    tols = np.full(len(space), tol * max(1.0, flux.sup_norm))
    return EntropyReport(c_grid, [ch.name for ch in space], res, tols, M)


def stationary_audit_cells(traj_values: np.ndarray, edges: np.ndarray, lam_a: float, lam_b: float,
                           flux: FluxTable, **kw) -> EntropyReport:
    """Stationary audit of a cell-wise constant profile."""
    return stationary_audit(edges, traj_values, lam_a, lam_b, flux, **kw)
