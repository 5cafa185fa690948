"""Macroscopic flux functions and the Godunov two-point flux.

A :class:`FluxTable` stores a scalar flux ``f`` on a density grid together
with its interior local extrema and flat segments, which is everything
the Godunov flux and the bulk-density formula need.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

from . import equilibrium
from .models import Misanthrope, Overtaking

D_RHO = 1e-3
FLAT_REL = 1e-9
TRUNCATION_TOL = 1e-12


# ------------------------------------------------------------ model fluxes


def _mean_rate(spec: Misanthrope, rho: float) -> float:
    th = equilibrium.marginal_for_density(float(rho), spec).probs
    k = th.size
    if k > spec.n_table + 1:
        raise ValueError("marginal support exceeds the rate table")
    mean_rate = float(th @ spec.rates[:k, :k] @ th)
    if spec.capacity is None:
        # mass cut by truncation bounds the neglected part of the sum
        bmax = float(np.abs(spec.rates[:k, :k]).max())
        if equilibrium.TAIL_MASS * 2 * bmax > TRUNCATION_TOL * max(abs(mean_rate), 1.0):
            raise ValueError("truncation tail too heavy for the requested accuracy")
    return mean_rate


def misanthrope_flux(spec: Misanthrope, rho: float) -> np.ndarray:
    """``h(rho) = gamma * sum_{n,m} theta(n) theta(m) b(n, m)`` with ``gamma`` the kernel drift."""
    return spec.kernel.drift * _mean_rate(spec, rho)


def overtaking_flux(spec: Overtaking, rho) -> np.ndarray:
    """Closed form ``rho (1 - rho) sum_i [sum_j j (beta_j^{+e_i} - beta_j^{-e_i}) rho^(j-1)] e_i``.

    Vectorised in ``rho``; the result has shape ``rho.shape + (d,)``.
    """
    r = np.asarray(rho, dtype=float)
    if np.any(r < 0) or np.any(r > 1):
        raise ValueError("density outside [0, 1]")
    d = spec.d
    J = spec.J
    out = np.zeros(r.shape + (d,))
    for i in range(d):
        acc = np.zeros_like(r)
        for j in range(1, J + 1):
            acc = acc + j * (spec.beta[2 * i, j] - spec.beta[2 * i + 1, j]) * r ** (j - 1)
        out[..., i] = r * (1 - r) * acc
    return out


def model_flux(spec, rho):
    if isinstance(spec, Overtaking):
        return overtaking_flux(spec, rho)
    return misanthrope_flux(spec, rho)


def normal_flux_function(spec, normal) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorised ``rho -> h(rho) . n``."""
    n = np.asarray(normal, dtype=float)
    if isinstance(spec, Overtaking):
        return lambda r: overtaking_flux(spec, r) @ n
    gn = float(spec.kernel.drift @ n)

    def f(r):
        r = np.asarray(r, dtype=float)
        if gn == 0:
            return np.zeros(r.shape)
        vals = np.array([gn * _mean_rate(spec, x) for x in r.reshape(-1)])
        return vals.reshape(r.shape)

    return f


# ----------------------------------------------------------------- tables


@dataclass(frozen=True)
class FluxTable:
    """Scalar flux sampled on ``[0, rho_max]``.

    ``func`` evaluates the flux exactly when available; otherwise values
    between grid points come from linear interpolation.  ``extrema`` are
    the interior strict local extrema (one representative point for a flat
    extremal plateau) and ``kinds`` is +1 for a maximum, -1 for a minimum.
    ``flats`` lists maximal intervals on which ``f`` varies by at most
    ``eps_flat``.
    """

    grid: np.ndarray
    values: np.ndarray
    func: Callable | None = field(default=None, compare=False, repr=False)
    eps_flat: float = 0.0
    lipschitz: float = 0.0
    extrema: np.ndarray = None
    kinds: np.ndarray = None
    ext_values: np.ndarray = None
    flats: tuple = ()

    @property
    def rho_max(self) -> float:
        return float(self.grid[-1])

    @property
    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())

    def __call__(self, rho):
        r = np.asarray(rho, dtype=float)
        if self.func is not None:
            out = np.asarray(self.func(r), dtype=float)
        else:
            out = np.interp(r, self.grid, self.values)
        return float(out) if out.ndim == 0 else out

    def derivative(self, rho, h: float = 1e-6):
        r = np.asarray(rho, dtype=float)
        lo = np.clip(r - h, 0.0, self.rho_max)
        hi = np.clip(r + h, 0.0, self.rho_max)
        return (self(hi) - self(lo)) / (hi - lo)

    # constructors

    @classmethod
    def from_function(cls, f: Callable, rho_max: float, d_rho: float = D_RHO) -> "FluxTable":
        n = max(2, int(round(rho_max / d_rho)))
        grid = np.linspace(0.0, rho_max, n + 1)
        values = np.asarray(f(grid), dtype=float)
        return cls._build(grid, values, f)

    @classmethod
    def from_samples(cls, grid, values) -> "FluxTable":
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2:
            raise ValueError("grid and values must be matching 1-d arrays")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        return cls._build(grid, values, None)

    @classmethod
    def for_model(cls, spec, normal=None, rho_max=None, d_rho: float = D_RHO) -> "FluxTable":
        """Tabulate ``h . n`` for a model; ``rho_max`` is required for unbounded occupations."""
        if normal is None:
            normal = np.eye(spec.d)[0]
        top = equilibrium.max_density(spec)
        if math.isinf(top):
            if rho_max is None:
                raise ValueError("rho_max is needed for unbounded occupations")
            top = float(rho_max)
        exact = normal_flux_function(spec, normal)
        if isinstance(spec, Overtaking):
            return cls.from_function(exact, top, d_rho)
        # each exact value costs a root solve; a not-a-knot spline through
        # exact samples is accurate to O(d_rho^4) and cheap inside solvers
        n = max(2, int(round(top / d_rho)))
        grid = np.linspace(0.0, top, n + 1)
        values = np.asarray(exact(grid), dtype=float)
        return cls._build(grid, values, CubicSpline(grid, values))

    @classmethod
    def _build(cls, grid, values, func) -> "FluxTable":
        if not np.all(np.isfinite(values)):
            raise ValueError("flux values must be finite")
        scale = float(np.abs(values).max())
        eps = FLAT_REL * scale
        dq = np.abs(np.diff(values) / np.diff(grid))
        lip = float(dq.max()) if dq.size else 0.0
        flats, ext, kinds = _shape(grid, values, eps, func)
        if func is not None:
            h = 1e-7 * max(grid[-1], 1.0)
            lo = np.clip(grid - h, grid[0], grid[-1])
            hi = np.clip(grid + h, grid[0], grid[-1])
            der = np.abs((np.asarray(func(hi)) - np.asarray(func(lo))) / (hi - lo))
            lip = max(lip, float(der.max()))
        ext = np.asarray(ext, dtype=float)
        ev = np.asarray(func(ext), dtype=float) if (func is not None and ext.size) else np.interp(ext, grid, values)
        grid = grid.copy()
        values = values.copy()
        for a in (grid, values, ext, ev):
            a.setflags(write=False)
        kinds = np.asarray(kinds, dtype=np.int64)
        kinds.setflags(write=False)
        return cls(grid, values, func, eps, lip, ext, kinds, np.atleast_1d(ev), tuple(flats))

    # serialisation

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rho", "f"])
        for r, v in zip(self.grid, self.values):
            w.writerow([repr(float(r)), repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "FluxTable":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["rho", "f"]:
            raise ValueError("flux CSV must start with a 'rho,f' header")
        data = np.array([[float(a), float(b)] for a, b in rows[1:]])
        return cls.from_samples(data[:, 0], data[:, 1])

    # queries

    def is_flat(self, lo: float, hi: float) -> bool:
        """``f`` constant (within ``eps_flat``) on ``[lo, hi]``."""
        lo, hi = min(lo, hi), max(lo, hi)
        if hi - lo <= 0:
            return True
        for p, q in self.flats:
            if p <= lo + 1e-12 and hi <= q + 1e-12:
                return True
        return False

    def flat_segment(self, rho: float):
        """The maximal flat interval containing ``rho``, or ``None``."""
        for p, q in self.flats:
            if p - 1e-12 <= rho <= q + 1e-12:
                return p, q
        return None


def _shape(grid, values, eps, func):
    """Flat segments and interior extrema of sampled values."""
    dv = np.diff(values)
    sign = np.where(dv > eps, 1, np.where(dv < -eps, -1, 0))
    # maximal runs of flat steps; a run is a plateau if its total variation stays within eps
    flats = []
    runs = []  # (sign, start_index, end_index) over grid points
    i = 0
    n = sign.size
    while i < n:
        j = i
        while j < n and sign[j] == sign[i]:
            j += 1
        runs.append((int(sign[i]), i, j))
        i = j
    for s, i, j in runs:
        if s == 0:
            seg = values[i : j + 1]
            if seg.max() - seg.min() <= eps:
                lo, hi = _refine_flat(grid, values, i, j, eps, func)
                flats.append((lo, hi))
    ext, kinds = [], []
    # walk the sequence of monotone runs; plateaus between runs of opposite sign are extremal
    for k in range(len(runs)):
        s, i, j = runs[k]
        if s == 0:
            continue
        nxt = k + 1
        while nxt < len(runs) and runs[nxt][0] == 0:
            nxt += 1
        if nxt >= len(runs) or runs[nxt][0] == s:
            continue
        kind = 1 if s > 0 else -1
        if nxt == k + 1:
            x = _refine_extremum(grid, values, j, kind, func)
        else:
            x = 0.5 * (grid[runs[k + 1][1]] + grid[runs[nxt - 1][2]])
        ext.append(x)
        kinds.append(kind)
    return flats, ext, kinds


def _refine_flat(grid, values, i, j, eps, func):
    lo, hi = float(grid[i]), float(grid[j])
    if func is None:
        return lo, hi
    level = float(values[i])

    def flat_at(x):
        return abs(float(func(np.asarray(x))) - level) <= eps

    # push each end outward to the last point where f still equals the level
    if i > 0:
        a, b = float(grid[i - 1]), lo
        for _ in range(60):
            m = 0.5 * (a + b)
            a, b = (a, m) if flat_at(m) else (m, b)
        lo = b
    if j < grid.size - 1:
        a, b = hi, float(grid[j + 1])
        for _ in range(60):
            m = 0.5 * (a + b)
            a, b = (m, b) if flat_at(m) else (a, m)
        hi = a
    return lo, hi


def _refine_extremum(grid, values, j, kind, func):
    lo = grid[max(j - 1, 0)]
    hi = grid[min(j + 1, grid.size - 1)]
    if func is not None:
        sgn = -kind
        res = minimize_scalar(lambda x: sgn * float(func(np.asarray(x))), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-13})
        return float(res.x)
    # vertex of the parabola through three samples
    x0, x1, x2 = grid[j - 1], grid[j], grid[j + 1]
    y0, y1, y2 = values[j - 1], values[j], values[j + 1]
    den = (x0 - x1) * (x0 - x2) * (x1 - x2)
    A = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / den
    B = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / den
    if A == 0:
        return float(x1)
    return float(np.clip(-B / (2 * A), x0, x2))


# ----------------------------------------------------------------- Godunov


def godunov_flux(u, v, flux: FluxTable):
    """``min_[u, v] f`` if ``u <= v``, ``max_[v, u] f`` otherwise; vectorised."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    u, v = np.broadcast_arrays(u, v)
    fu = np.asarray(flux(u), dtype=float)
    fv = np.asarray(flux(v), dtype=float)
    up = u <= v
    out = np.where(up, np.minimum(fu, fv), np.maximum(fu, fv))
    if flux.extrema.size:
        lo = np.minimum(u, v)[..., None]
        hi = np.maximum(u, v)[..., None]
        inside = (flux.extrema > lo) & (flux.extrema < hi)
        ev = flux.ext_values
        mins = np.where(inside & (flux.kinds < 0), ev, np.inf).min(axis=-1)
        maxs = np.where(inside & (flux.kinds > 0), ev, -np.inf).max(axis=-1)
        out = np.where(up, np.minimum(out, mins), np.maximum(out, maxs))
    return float(out) if out.ndim == 0 else out
