"""Exact continuous-time simulation of open lattice gases and their couplings.

Process time is ``N`` times macroscopic time.  A state owns its random
stream: uniforms are drawn in fixed-size chunks from a numpy generator
seeded by ``SeedSequence([seed, replica])``, so a run is reproducible from
``(seed, replica)`` and the number of uniforms already consumed.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .. import equilibrium
from ..geometry import LatticeDomain
from ..models import Misanthrope, Overtaking, boundary_rate_tables
from . import kernels as K

CHUNK = 1 << 20
DEFAULT_MAX_EVENTS = 1 << 62


class OrderViolation(AssertionError):
    """The coupled engine produced a pair that is no longer ordered."""


class RateOverflow(RuntimeError):
    """An occupation outgrew the rate table of an unbounded model."""


# ------------------------------------------------------------------ streams


@dataclass
class RandomStream:
    seed: int
    replica: int = 0
    consumed: int = 0
    _gen: np.random.Generator = field(default=None, repr=False)
    buf: np.ndarray = field(default=None, repr=False)
    pos: int = 0

    def __post_init__(self):
        ss = np.random.SeedSequence([int(self.seed), int(self.replica)])
        self._gen = np.random.Generator(np.random.PCG64(ss))
        self.buf = self._gen.random(CHUNK)
        self.pos = 0

    def refill(self):
        self.buf = np.concatenate([self.buf[self.pos :], self._gen.random(CHUNK)])
        self.pos = 0

    def uniforms(self, n: int) -> np.ndarray:
        while self.buf.size - self.pos < n:
            self.refill()
        out = self.buf[self.pos : self.pos + n].copy()
        self.pos += n
        self.consumed += n
        return out


# ------------------------------------------------------------------- states


@dataclass
class SimState:
    """Configuration of one open process at process time ``t``.

    ``occ`` holds running time integrals of the occupations since the last
    :meth:`reset_occupation`; ``counters`` is the event ledger.
    """

    lattice: LatticeDomain
    occupation: np.ndarray  # shape (2, n_sites); row 1 unused for single runs
    stream: RandomStream
    t: float = 0.0
    counters: np.ndarray = field(default_factory=lambda: np.zeros(K.N_COUNTERS, dtype=np.int64))
    occ: np.ndarray = None
    last_t: np.ndarray = None
    t_occ0: float = 0.0
    initial_total: np.ndarray = None

    def __post_init__(self):
        ns = self.lattice.n_sites
        if self.occ is None:
            self.occ = np.zeros((2, ns))
        if self.last_t is None:
            self.last_t = np.full(ns, self.t)
        if self.initial_total is None:
            self.initial_total = self.occupation.sum(axis=1)

    @property
    def eta(self) -> np.ndarray:
        return self.occupation[0]

    @property
    def N(self) -> int:
        return self.lattice.N

    @property
    def t_macro(self) -> float:
        return self.t / self.N

    def reset_occupation(self):
        self.occ[:] = 0.0
        self.last_t[:] = self.t
        self.t_occ0 = self.t

    def occupation_average(self) -> np.ndarray:
        """Time averages of both rows since the last reset, shape ``(2, n_sites)``."""
        span = self.t - self.t_occ0
        if span <= 0:
            return self.occupation.astype(float)
        total = self.occ + self.occupation * (self.t - self.last_t)
        return total / span

    def ledger(self) -> dict:
        c = self.counters
        totals = self.occupation.sum(axis=1)
        out = {
            "events": int(c[K.C_EVENTS]),
            "births": int(c[K.C_BIRTH0]),
            "deaths": int(c[K.C_DEATH0]),
            "order_violations": int(c[K.C_VIOL]),
            "joint_events": int(c[K.C_JOINT]),
            "balanced": bool(totals[0] - self.initial_total[0] == c[K.C_BIRTH0] - c[K.C_DEATH0]),
        }
        return out


@dataclass
class CoupledState(SimState):
    """Pair ``(eta, xi)`` driven by one clock; ``xi`` sees a uniform reservoir ``c``."""

    c: float = 0.0

    @property
    def xi(self) -> np.ndarray:
        return self.occupation[1]

    def ledger(self) -> dict:
        out = super().ledger()
        c = self.counters
        totals = self.occupation.sum(axis=1)
        out["xi_births"] = int(c[K.C_BIRTH1])
        out["xi_deaths"] = int(c[K.C_DEATH1])
        out["balanced"] = out["balanced"] and bool(
            totals[1] - self.initial_total[1] == c[K.C_BIRTH1] - c[K.C_DEATH1]
        )
        return out


# ------------------------------------------------------------------- engine


def _i64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


class Engine:
    """Static event tables for one model on one lattice."""

    def __init__(self, spec, lattice: LatticeDomain):
        if spec.d != lattice.d:
            raise ValueError("model and lattice dimensions differ")
        if lattice.n_shell and lattice.lam is None:
            raise ValueError("lattice has a shell but no reservoir densities")
        self.spec = spec
        self.lattice = lattice
        ns, nsh = lattice.n_sites, lattice.n_shell
        self.ns = ns
        pts = np.vstack([lattice.sites, lattice.shell]) if nsh else lattice.sites
        n_own = pts.shape[0]
        if isinstance(spec, Misanthrope):
            if spec.range_ > lattice.range_ and nsh:
                raise ValueError("shell thinner than the jump range")
            self.kind = K.MISANTHROPE
            offs = spec.kernel.offsets
            cand = (pts[:, None, :] + offs[None, :, :]).reshape(-1, lattice.d)
            self.nbr = _i64(lattice.lookup(cand).reshape(n_own, offs.shape[0]))
            self.pk = _f64(spec.kernel.probs)
            self.B = _f64(spec.rates)
            self.ray = -np.ones((1, 1, 1), dtype=np.int64)
            self.beta = np.zeros((1, 2))
            self.n_max = spec.n_table
            deps = [set(row[row >= 0].tolist()) for row in self.nbr]
        elif isinstance(spec, Overtaking):
            if spec.J > lattice.range_ and nsh:
                raise ValueError("shell thinner than the overtaking range")
            self.kind = K.OVERTAKING
            J = spec.J
            A = 2 * spec.d
            ray = np.empty((n_own, A, J + 1), dtype=np.int64)
            for a, alpha in spec.directions():
                for k in range(J + 1):
                    ray[:, a, k] = lattice.lookup(pts + k * np.asarray(alpha, dtype=np.int64))
            self.ray = ray
            self.beta = _f64(spec.beta)
            self.nbr = -np.ones((1, 1), dtype=np.int64)
            self.pk = np.zeros(1)
            self.B = np.zeros((2, 2))
            self.n_max = 1
            active = np.any(spec.beta[:, 1:] > 0, axis=1)
            sub = ray[:, active, :]
            deps = [set(sub[o][sub[o] >= 0].tolist()) for o in range(n_own)]
        else:
            raise TypeError(f"unsupported model {type(spec).__name__}")
        for o in range(min(ns, n_own)):
            deps[o].add(o)
        infl = [[] for _ in range(ns)]
        for o, ds in enumerate(deps):
            for i in sorted(ds):
                if i < ns:
                    infl[i].append(o)
        width = max((len(v) for v in infl), default=1)
        self.infl = -np.ones((ns, max(width, 1)), dtype=np.int64)
        for i, v in enumerate(infl):
            self.infl[i, : len(v)] = v
        self.n_owners = n_own
        self._tables = {}

    # reservoir tables, cached by the pair of reservoir fields
    def tables(self, lam_eta: np.ndarray, lam_xi: np.ndarray):
        key = (lam_eta.tobytes(), lam_xi.tobytes())
        if key in self._tables:
            return self._tables[key]
        nsh = lam_eta.size
        if self.kind == K.MISANTHROPE:
            distinct = np.unique(np.concatenate([lam_eta, lam_xi]))
            if distinct.size:
                bplus, bminus = boundary_rate_tables(self.spec, distinct.tolist())
            else:
                bplus = bminus = np.zeros((0, self.B.shape[0]))
            lamid = np.vstack([np.searchsorted(distinct, lam_eta), np.searchsorted(distinct, lam_xi)])
            res_p = np.zeros((2, nsh))
            res_joint = np.zeros((nsh, 2, 2))
        else:
            distinct = np.zeros(0)
            bplus = bminus = np.zeros((0, 2))
            lamid = np.zeros((2, nsh), dtype=np.int64)
            res_p = np.vstack([lam_eta, lam_xi])
            lo = np.minimum(lam_eta, lam_xi)
            hi = np.maximum(lam_eta, lam_xi)
            res_joint = np.zeros((nsh, 2, 2))
            res_joint[:, 1, 1] = lo
            res_joint[:, 0, 0] = 1.0 - hi
            res_joint[:, 1, 0] = np.maximum(lam_eta - lam_xi, 0.0)
            res_joint[:, 0, 1] = np.maximum(lam_xi - lam_eta, 0.0)
        out = (_f64(bplus), _f64(bminus), _i64(lamid.reshape(2, nsh)), _f64(res_p), _f64(res_joint))
        self._tables[key] = out
        return out

    def _args(self, coupled: bool, c: float | None):
        lam = self.lattice.lam if self.lattice.lam is not None else np.zeros(0)
        lam = np.asarray(lam, dtype=float)
        lam_xi = np.full(lam.size, float(c)) if coupled else lam
        bplus, bminus, lamid, res_p, res_joint = self.tables(lam, lam_xi)
        return (self.kind, self.ns, coupled, None, self.nbr, self.pk, self.B, bplus, bminus, lamid,
                self.ray, self.beta, res_p, res_joint)

    def owner_rates(self, occupation, coupled=False, c=None) -> np.ndarray:
        args = list(self._args(coupled, c))
        args[3] = occupation
        rates = np.zeros(self.n_owners)
        K.owner_rates(*args, rates)
        return rates

    def events(self, occupation, owner: int, coupled=False, c=None):
        """Events owned by one index, as ``(rates, actions)``; used for checks against explicit generators."""
        args = list(self._args(coupled, c))
        args[3] = _i64(occupation)
        return K.list_events(owner, *args)

    def advance(self, state: SimState, t_end_macro: float, coupled: bool, c=None, order_sign=0,
                strict=True, max_events=DEFAULT_MAX_EVENTS) -> int:
        """Run ``state`` in place up to macroscopic time ``t_end_macro``; returns the status code."""
        t_stop = float(t_end_macro) * state.N
        if t_stop <= state.t:
            return K.ST_DONE
        args = list(self._args(coupled, c))
        args[3] = state.occupation
        rates = np.zeros(self.n_owners)
        K.owner_rates(*args, rates)
        tree = np.zeros(self.n_owners + 1)
        K.fw_build(tree, rates)
        stream = state.stream
        left = int(max_events)
        while True:
            before = stream.pos
            ev0 = int(state.counters[K.C_EVENTS])
            t, pos, status = K.advance(
                *args, self.infl, rates, tree, stream.buf, stream.pos, state.t, t_stop, left,
                order_sign, strict, state.counters, state.occ, state.last_t, self.n_max,
            )
            state.t = t
            stream.pos = pos
            stream.consumed += pos - before
            left -= int(state.counters[K.C_EVENTS]) - ev0
            if status == K.ST_RNG:
                stream.refill()
                continue
            if status == K.ST_ORDER:
                raise OrderViolation(f"order broken at process time {t:.6g}")
            if status == K.ST_OVERFLOW:
                raise RateOverflow(f"occupation exceeded the rate table size {self.n_max}")
            return status


_ENGINES: dict = {}


def get_engine(spec, lattice: LatticeDomain) -> Engine:
    key = (id(spec), id(lattice))
    eng = _ENGINES.get(key)
    if eng is None or eng.spec is not spec or eng.lattice is not lattice:
        if len(_ENGINES) > 32:
            _ENGINES.clear()
        eng = Engine(spec, lattice)
        _ENGINES[key] = eng
    return eng


# ----------------------------------------------------------- initial data


def _stream(rng) -> RandomStream:
    if isinstance(rng, RandomStream):
        return rng
    if isinstance(rng, tuple):
        return RandomStream(*rng)
    return RandomStream(int(rng))


def _profile_values(lattice: LatticeDomain, rho0) -> np.ndarray:
    if callable(rho0):
        return np.asarray(rho0(lattice.macro(lattice.sites)), dtype=float).reshape(lattice.n_sites)
    return np.full(lattice.n_sites, float(rho0))


def _sample(spec, rhos: np.ndarray, u: np.ndarray) -> np.ndarray:
    out = np.empty(rhos.size, dtype=np.int64)
    for r in np.unique(rhos):
        sel = rhos == r
        out[sel] = equilibrium.sample_site(equilibrium.marginal_for_density(float(r), spec), u[sel])
    return out


def init_from_profile(lattice: LatticeDomain, rho0, rng, spec) -> SimState:
    """Independent occupations ``eta(x) ~ theta_{rho0(x/N)}``.

    ``rho0`` is a function of macroscopic points of shape ``(M, d)`` or a
    constant; ``rng`` is a seed, a ``(seed, replica)`` pair or a stream.
    """
    stream = _stream(rng)
    rhos = _profile_values(lattice, rho0)
    cap = equilibrium.max_density(spec)
    if np.any(rhos < 0) or np.any(rhos > cap):
        raise ValueError("initial profile outside [0, K]")
    u = stream.uniforms(lattice.n_sites)
    occ = np.zeros((2, lattice.n_sites), dtype=np.int64)
    occ[0] = _sample(spec, rhos, u)
    return SimState(lattice, occ, stream)


def init_coupled(lattice: LatticeDomain, rho0, c: float, rng, spec, xi0=None) -> CoupledState:
    """Pair started from one uniform per site: ``eta = F_rho0^{-1}(U)``, ``xi = F_c^{-1}(U)``.

    The two rows are then ordered wherever the densities are.  ``xi0`` may
    override the second row (e.g. a copy of ``eta``).
    """
    stream = _stream(rng)
    rhos = _profile_values(lattice, rho0)
    u = stream.uniforms(lattice.n_sites)
    occ = np.zeros((2, lattice.n_sites), dtype=np.int64)
    occ[0] = _sample(spec, rhos, u)
    if xi0 is None:
        occ[1] = _sample(spec, np.full(lattice.n_sites, float(c)), u)
    else:
        occ[1] = np.asarray(xi0, dtype=np.int64)
    return CoupledState(lattice, occ, stream, c=float(c))


# -------------------------------------------------------------- dynamics


def run(state: SimState, spec, lattice: LatticeDomain | None = None, t_end: float = 0.0,
        max_events=DEFAULT_MAX_EVENTS) -> SimState:
    """Advance a single process to macroscopic time ``t_end`` (in place; also returned)."""
    lattice = lattice or state.lattice
    get_engine(spec, lattice).advance(state, t_end, False, max_events=max_events)
    return state


def order_sign_for(state: CoupledState, lattice: LatticeDomain, c: float) -> int:
    """+1 if ``eta <= xi`` must persist, -1 if ``eta >= xi`` must, 0 if neither is implied."""
    lam = lattice.lam if lattice.lam is not None else np.zeros(0)
    eta, xi = state.occupation
    if np.all(lam <= c) and np.all(eta <= xi):
        return 1
    if np.all(lam >= c) and np.all(eta >= xi):
        return -1
    return 0


def run_coupled(state: CoupledState, spec, lattice: LatticeDomain | None = None, c: float | None = None,
                t_end: float = 0.0, check_order: bool = True, strict: bool = True,
                max_events=DEFAULT_MAX_EVENTS) -> CoupledState:
    """Advance a basic coupling; ``xi`` sees the uniform reservoir ``c``.

    When the reservoirs and initial data are ordered the order is checked
    after every event; a violation raises :class:`OrderViolation` (or is
    only counted if ``strict`` is false).
    """
    lattice = lattice or state.lattice
    c = state.c if c is None else float(c)
    state.c = c
    sign = order_sign_for(state, lattice, c) if check_order else 0
    get_engine(spec, lattice).advance(state, t_end, True, c, sign, strict, max_events)
    return state


# ------------------------------------------------------------ diagnostics


@dataclass(frozen=True)
class DensityProfile:
    """Cell densities along the slab normal; cell ``i`` covers ``[origin + i delta, origin + (i+1) delta)``."""

    delta: float
    origin: float
    values: np.ndarray
    stderr: np.ndarray | None = None
    t: float = 0.0
    nonstationary: bool = False

    @property
    def centers(self) -> np.ndarray:
        return self.origin + self.delta * (np.arange(self.values.size) + 0.5)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "cell_index", "density", "stderr"])
        se = self.stderr if self.stderr is not None else np.full(self.values.size, np.nan)
        for i, (v, s) in enumerate(zip(self.values, se)):
            w.writerow([repr(float(self.t)), i, repr(float(v)), repr(float(s))])
        return buf.getvalue()


def _cells(lattice: LatticeDomain, delta: float):
    if delta * lattice.N < 1 - 1e-12:
        raise ValueError("cell width below the lattice spacing")
    dom = lattice.domain
    origin = float(dom.a_outer)
    n_cells = max(1, int(math.ceil((dom.b_outer - origin) / delta - 1e-9)))
    s = lattice.normal_coord(lattice.sites)
    idx = np.floor((s - origin) / delta + 1e-9).astype(np.int64)
    idx = np.clip(idx, 0, n_cells - 1)
    vol = delta * lattice.width ** (lattice.d - 1)
    return origin, n_cells, idx, vol


def cell_values(lattice: LatticeDomain, occupation: np.ndarray, delta: float):
    """``N^{-d} sum_{y in cell} eta(y)`` divided by the cell volume."""
    origin, n_cells, idx, vol = _cells(lattice, delta)
    mass = np.bincount(idx, weights=np.asarray(occupation, dtype=float), minlength=n_cells)
    return origin, mass / (lattice.N ** lattice.d * vol)


def empirical_density(state: SimState, delta: float, row: int = 0) -> DensityProfile:
    origin, vals = cell_values(state.lattice, state.occupation[row], delta)
    return DensityProfile(delta, origin, vals, t=state.t_macro)


def kruzkov_monitor(state: CoupledState, phi: Callable, sign: int = 1) -> float:
    """``N^{-d} sum_x phi(x/N) (eta(x) - xi(x))^{+/-}``."""
    lat = state.lattice
    w = np.asarray(phi(lat.macro(lat.sites)), dtype=float).reshape(lat.n_sites)
    diff = state.occupation[0] - state.occupation[1]
    part = np.maximum(diff, 0) if sign > 0 else np.maximum(-diff, 0)
    return float(w @ part) / lat.N ** lat.d


def region_density(lattice: LatticeDomain, occupation: np.ndarray, predicate: Callable) -> float:
    """Mean occupation over the sites whose macroscopic position satisfies ``predicate``."""
    sel = np.asarray(predicate(lattice.macro(lattice.sites)), dtype=bool)
    if not sel.any():
        raise ValueError("region contains no lattice sites")
    return float(np.mean(np.asarray(occupation, dtype=float)[sel]))


def profiles_at(state: SimState, spec, times: Sequence[float], delta: float) -> list[DensityProfile]:
    """Run forward and record the empirical density at each macroscopic time."""
    out = []
    for t in times:
        run(state, spec, state.lattice, t)
        out.append(empirical_density(state, delta))
    return out


@dataclass(frozen=True)
class StationaryEstimate:
    profile: DensityProfile
    site_means: np.ndarray  # replicas x sites time averages
    ledgers: list


def _time_average(spec, lattice, init, t0, t1, seed, replica):
    state = init_from_profile(lattice, init, (seed, replica), spec)
    run(state, spec, lattice, t0)
    state.reset_occupation()
    tm = 0.5 * (t0 + t1)
    run(state, spec, lattice, tm)
    first = state.occupation_average()[0]
    state.reset_occupation()
    run(state, spec, lattice, t1)
    second = state.occupation_average()[0]
    return first, second, state.ledger()


def stationary_profile(spec, lattice: LatticeDomain, burn_in: float, horizon: float, replicas: int,
                       seed: int, delta: float = 0.02, init=None, workers: int = 1) -> StationaryEstimate:
    """Time and replica average of the empirical density over ``[burn_in, horizon]``.

    Standard errors come from the spread across replicas.  The estimate is
    flagged non-stationary when the whole-domain mean over the first and
    second halves of the window differ by more than three standard errors.
    """
    if not burn_in < horizon:
        raise ValueError("need burn_in < horizon")
    if replicas < 1:
        raise ValueError("need at least one replica")
    if init is None:
        lam = lattice.lam if lattice.lam is not None and lattice.lam.size else np.zeros(1)
        init = float(0.5 * (lam.min() + lam.max()))
    jobs = [(spec, lattice, init, burn_in, horizon, seed, r) for r in range(replicas)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(_time_average, *zip(*jobs)))
    else:
        res = [_time_average(*j) for j in jobs]
    first = np.array([r[0] for r in res])
    second = np.array([r[1] for r in res])
    means = 0.5 * (first + second)
    cells = np.array([cell_values(lattice, m, delta)[1] for m in means])
    origin = cell_values(lattice, means[0], delta)[0]
    values = cells.mean(axis=0)
    if replicas > 1:
        stderr = cells.std(axis=0, ddof=1) / math.sqrt(replicas)
        gap = first.mean(axis=1) - second.mean(axis=1)
        se_gap = gap.std(ddof=1) / math.sqrt(replicas)
        flag = bool(abs(gap.mean()) > 3 * se_gap) if se_gap > 0 else bool(gap.mean() != 0)
    else:
        stderr = np.full(values.size, np.nan)
        flag = False
    prof = DensityProfile(delta, origin, values, stderr, t=horizon, nonstationary=flag)
    return StationaryEstimate(prof, means, [r[2] for r in res])


def _window_values(occupation: np.ndarray, lattice: LatticeDomain, base: int, window) -> dict:
    d = lattice.d
    base_pt = lattice.sites[base]
    out = {}
    for off in window:
        z = np.atleast_1d(np.asarray(off, dtype=np.int64))
        j = int(lattice.lookup(base_pt + z)[0])
        if j < 0 or j >= lattice.n_sites:
            raise ValueError(f"window offset {tuple(z)} leaves the domain")
        key = int(z[0]) if d == 1 else tuple(int(v) for v in z)
        out[key] = occupation[..., j]
    return out


def local_equilibrium_probe(spec, lattice: LatticeDomain, g: Callable, window, x, samples: int,
                            burn_in: float, spacing: float, seed: int, init=None) -> tuple[float, float]:
    """Time average of ``g`` on the configuration seen from the site nearest ``N x``.

    ``g`` receives a mapping from window offsets to occupations and the
    returned pair is ``(mean, stderr)`` with a batch-means standard error.
    """
    if init is None:
        lam = lattice.lam if lattice.lam is not None and lattice.lam.size else np.zeros(1)
        init = float(0.5 * (lam.min() + lam.max()))
    target = np.asarray(x, dtype=float).reshape(-1) * lattice.N
    base = int(np.argmin(np.linalg.norm(lattice.sites - target, axis=1)))
    state = init_from_profile(lattice, init, (seed, 0), spec)
    run(state, spec, lattice, burn_in)
    vals = np.empty(samples)
    t = burn_in
    for i in range(samples):
        t += spacing
        run(state, spec, lattice, t)
        vals[i] = float(g(_window_values(state.eta, lattice, base, window)))
    nb = min(20, samples)
    batches = np.array([b.mean() for b in np.array_split(vals, nb)])
    se = batches.std(ddof=1) / math.sqrt(nb) if nb > 1 else math.nan
    return float(vals.mean()), float(se)


def product_expectation(spec, g: Callable, window, rho: float, samples: int, seed: int) -> float:
    """Monte Carlo value of ``g`` under the product measure with marginals ``theta_rho``."""
    m = equilibrium.marginal_for_density(rho, spec)
    rng = np.random.default_rng(seed)
    d = spec.d
    eta = {}
    for off in window:
        key = int(np.atleast_1d(off)[0]) if d == 1 else tuple(int(v) for v in off)
        eta[key] = equilibrium.sample_site(m, rng.random(samples))
    return float(np.mean(g(eta)))
