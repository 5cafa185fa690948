"""Microscopic models: the Misanthrope process and exclusion with overtaking.

Sites are plain ``int`` in one dimension and ``tuple`` of ints otherwise.
Configurations passed to the rate functions are mappings from sites to
occupations; values may also be numpy arrays, in which case every rate is
evaluated elementwise (used for Monte Carlo averages over many windows).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Mapping, Union

import numpy as np

from . import equilibrium

RATE_TOL = 1e-10


def _as_site(x, d: int):
    if d == 1:
        return int(x[0]) if isinstance(x, (tuple, list, np.ndarray)) else int(x)
    return tuple(int(v) for v in x)


def _shift(x, z, d: int, k: int = 1):
    if d == 1:
        return x + k * z[0]
    return tuple(xi + k * zi for xi, zi in zip(x, z))


@dataclass(frozen=True)
class JumpKernel:
    """Finitely supported jump law ``p(z)`` on ``Z^d``."""

    offsets: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        off = np.atleast_2d(np.asarray(self.offsets, dtype=np.int64))
        pr = np.asarray(self.probs, dtype=float)
        if off.shape[0] != pr.size:
            raise ValueError("offsets and probs differ in length")
        if np.any(np.all(off == 0, axis=1)):
            raise ValueError("zero jump in kernel support")
        off.setflags(write=False)
        pr.setflags(write=False)
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "probs", pr)

    @classmethod
    def nearest_neighbour(cls, right: float = 1.0, d: int = 1, axis: int = 0):
        offs, probs = [], []
        e = np.zeros(d, dtype=np.int64)
        e[axis] = 1
        if right > 0:
            offs.append(e.copy())
            probs.append(right)
        if right < 1:
            offs.append(-e)
            probs.append(1.0 - right)
        return cls(np.array(offs), np.array(probs))

    @property
    def d(self) -> int:
        return self.offsets.shape[1]

    @property
    def range_(self) -> int:
        return int(np.abs(self.offsets).max())

    @property
    def drift(self) -> np.ndarray:
        return self.probs @ self.offsets

    def p(self, z) -> float:
        z = np.atleast_1d(np.asarray(z, dtype=np.int64))
        hit = np.all(self.offsets == z, axis=1)
        return float(self.probs[hit].sum())

    def is_irreducible(self, box: int = 3) -> bool:
        """Every nonzero ``z`` in ``[-box, box]^d`` is reachable as ``z`` or ``-z``.

        Reachability is a breadth-first search over sums of support vectors,
        confined to a box wide enough to hold the detours.
        """
        d = self.d
        lim = box + 2 * self.range_ * (box + 1)
        start = (0,) * d
        seen = set()
        queue = deque([start])
        while queue:
            x = queue.popleft()
            for z in self.offsets:
                y = tuple(int(a + b) for a, b in zip(x, z))
                if max(abs(v) for v in y) > lim or y in seen:
                    continue
                seen.add(y)
                queue.append(y)
        for z in np.ndindex(*([2 * box + 1] * d)):
            z = tuple(v - box for v in z)
            if any(z) and z not in seen and tuple(-v for v in z) not in seen:
                return False
        return True


@dataclass(frozen=True)
class Misanthrope:
    """Misanthrope process: a particle jumps x -> y at rate ``p(y-x) b(eta(x), eta(y))``.

    ``rates`` is the table ``b[n, m]`` for ``0 <= n, m <= n_table``.  With
    ``capacity=None`` (unbounded occupations) the table is a working
    truncation and must be large enough for the densities in use.
    """

    kernel: JumpKernel
    rates: np.ndarray
    capacity: int | None
    name: str = "misanthrope"
    log_qfact: np.ndarray = field(init=False, repr=False, compare=False)
    q_sup: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        b = np.array(self.rates, dtype=float)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ValueError("rate table must be square")
        if self.capacity is not None and b.shape[0] != self.capacity + 1:
            raise ValueError("rate table size must be capacity + 1")
        b.setflags(write=False)
        object.__setattr__(self, "rates", b)
        n_tab = b.shape[0] - 1
        q = np.empty(n_tab + 1)
        q[0] = 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            q[1:] = b[1:, 0] / b[1, : n_tab]
        logq = np.zeros(n_tab + 1)
        logq[1:] = np.cumsum(np.log(q[1:]))
        logq.setflags(write=False)
        object.__setattr__(self, "log_qfact", logq)
        object.__setattr__(self, "q_sup", float(np.max(q[1:])) if n_tab else math.inf)

    @classmethod
    def from_function(cls, kernel, b: Callable[[int, int], float], capacity, n_table=None, name="misanthrope"):
        size = capacity if capacity is not None else (n_table or 256)
        table = np.array([[float(b(n, m)) for m in range(size + 1)] for n in range(size + 1)])
        return cls(kernel, table, capacity, name)

    @property
    def d(self) -> int:
        return self.kernel.d

    @property
    def n_table(self) -> int:
        return self.rates.shape[0] - 1

    @property
    def range_(self) -> int:
        return self.kernel.range_

    def b(self, n, m):
        return self.rates[n, m]


@dataclass(frozen=True)
class Overtaking:
    """Exclusion with overtaking; ``beta[a, j]`` is the rate for distance ``j`` in direction ``a``.

    Directions are indexed ``a = 2*axis`` for ``+e_axis`` and ``2*axis + 1``
    for ``-e_axis``; column 0 of ``beta`` is unused and kept at zero.
    """

    beta: np.ndarray
    name: str = "overtaking"
    capacity: int = field(default=1, init=False)

    def __post_init__(self):
        w = np.array(self.beta, dtype=float)
        if w.ndim != 2 or w.shape[0] % 2:
            raise ValueError("beta must have shape (2d, J+1)")
        w[:, 0] = 0.0
        # trim trailing all-zero distances
        last = np.nonzero(np.any(w > 0, axis=0))[0]
        w = w[:, : (int(last.max()) + 1 if last.size else 1)]
        w.setflags(write=False)
        object.__setattr__(self, "beta", w)

    @classmethod
    def from_weights(cls, weights: Mapping, d: int = 1, name="overtaking"):
        """``weights`` maps a direction vector (e.g. ``(1,)``, ``(0, -1)``) to ``[beta_1, beta_2, ...]``."""
        J = max((len(v) for v in weights.values()), default=0)
        w = np.zeros((2 * d, J + 1))
        for alpha, vals in weights.items():
            w[direction_index(alpha, d), 1 : len(vals) + 1] = [float(v) for v in vals]
        return cls(w, name)

    @property
    def d(self) -> int:
        return self.beta.shape[0] // 2

    @property
    def J(self) -> int:
        return self.beta.shape[1] - 1

    @property
    def range_(self) -> int:
        return self.J

    @property
    def n_table(self) -> int:
        return 1

    @property
    def log_qfact(self) -> np.ndarray:
        return np.zeros(2)

    @property
    def q_sup(self) -> float:
        return math.inf

    def directions(self):
        d = self.d
        for a in range(2 * d):
            e = [0] * d
            e[a // 2] = 1 if a % 2 == 0 else -1
            yield a, tuple(e)


ModelSpec = Union[Misanthrope, Overtaking]


def direction_index(alpha, d: int) -> int:
    alpha = np.atleast_1d(np.asarray(alpha, dtype=np.int64))
    nz = np.nonzero(alpha)[0]
    if alpha.size != d or nz.size != 1 or abs(alpha[nz[0]]) != 1:
        raise ValueError(f"{alpha} is not a unit lattice direction in d={d}")
    return 2 * int(nz[0]) + (0 if alpha[nz[0]] > 0 else 1)


# ----------------------------------------------------------------- presets


def simple_exclusion(kernel: JumpKernel | None = None) -> Misanthrope:
    kernel = kernel or JumpKernel.nearest_neighbour(1.0)
    return Misanthrope.from_function(kernel, lambda n, m: n * (1 - m), 1, name="exclusion")


def k_exclusion(K: int, kernel: JumpKernel | None = None) -> Misanthrope:
    """``b(n, m) = n (K - m)``; binomial marginals, flux ``gamma rho (K - rho)``."""
    kernel = kernel or JumpKernel.nearest_neighbour(1.0)
    return Misanthrope.from_function(kernel, lambda n, m: n * (K - m), K, name=f"k_exclusion_{K}")


def zero_range(g: Callable[[int], float], kernel: JumpKernel | None = None, n_table: int = 256) -> Misanthrope:
    kernel = kernel or JumpKernel.nearest_neighbour(1.0)
    return Misanthrope.from_function(kernel, lambda n, m: g(n), None, n_table, name="zero_range")


def tasep_overtaking(beta1: float = 1.0, beta2: float = 0.0) -> Overtaking:
    return Overtaking.from_weights({(1,): [beta1, beta2]}, d=1)


# -------------------------------------------------------------- validation


@dataclass
class ValidationReport:
    checks: dict = field(default_factory=dict)

    def add(self, name: str, offending: list):
        self.checks[name] = list(offending)

    @property
    def passed(self) -> bool:
        return all(not v for v in self.checks.values())

    def failures(self) -> dict:
        return {k: v for k, v in self.checks.items() if v}


def validate_model(spec: ModelSpec) -> ValidationReport:
    """Check the structural hypotheses; each entry lists offending indices."""
    rep = ValidationReport()
    if isinstance(spec, Overtaking):
        w = spec.beta[:, 1:]
        rep.add("nonnegative", [tuple(i) for i in np.argwhere(w < 0)])
        rep.add("monotone", [(a, j + 1) for a, j in np.argwhere(np.diff(w, axis=1) > RATE_TOL)])
        ok = any(spec.beta[2 * i, 1] + spec.beta[2 * i + 1, 1] > 0 for i in range(spec.d))
        rep.add("irreducible", [] if ok else ["beta_1"])
        return rep

    k = spec.kernel
    bad = []
    if np.any(k.probs <= 0):
        bad.append("positive")
    if abs(k.probs.sum() - 1) > 1e-12:
        bad.append("normalised")
    rep.add("kernel", bad)
    rep.add("irreducible", [] if k.is_irreducible() else ["kernel"])

    b = spec.rates
    n_tab = spec.n_table
    K = spec.capacity
    top = K if K is not None else n_tab
    rep.add("b(0,.)=0", [(0, m) for m in range(n_tab + 1) if b[0, m] != 0])
    rep.add("b(.,K)=0", [] if K is None else [(n, K) for n in range(K + 1) if b[n, K] != 0])
    rep.add(
        "positive",
        [(n, m) for n in range(1, n_tab + 1) for m in range(n_tab + 1) if (K is None or m < K) and not b[n, m] > 0],
    )
    rep.add("nondecreasing_in_n", [(n, m) for n, m in np.argwhere(np.diff(b, axis=0) < -RATE_TOL)])
    rep.add("nonincreasing_in_m", [(n, m) for n, m in np.argwhere(np.diff(b, axis=1) > RATE_TOL)])

    scale = max(1.0, float(np.abs(b).max()))
    diff_bad, ratio_bad = [], []
    for n in range(top + 1):
        for m in range(top + 1):
            lhs = b[n, m] - b[m, n]
            rhs = b[n, 0] - b[m, 0]
            if abs(lhs - rhs) > RATE_TOL * scale:
                diff_bad.append((n, m))
            if n >= 1 and m + 1 <= top:
                # cross-multiplied ratio condition
                left = b[n, m] * b[m + 1, 0] * b[1, n - 1]
                right = b[n, 0] * b[1, m] * b[m + 1, n - 1]
                if abs(left - right) > RATE_TOL * scale**3:
                    ratio_bad.append((n, m))
    rep.add("condition_difference", diff_bad)
    rep.add("condition_ratio", ratio_bad)
    return rep


# ------------------------------------------------------------------- rates


def bulk_rate(spec: Misanthrope, eta: Mapping, x, y) -> float:
    d = spec.d
    z = np.subtract(np.atleast_1d(y), np.atleast_1d(x))
    pz = spec.kernel.p(z)
    if pz == 0:
        return 0.0
    return pz * spec.rates[eta[x], eta[y]]


def bar_b_plus(spec: Misanthrope, rho: float, n) -> float:
    """Rate factor for a reservoir particle at density ``rho`` entering a site holding ``n``."""
    th = equilibrium.marginal_for_density(rho, spec).probs
    return th @ spec.rates[: th.size, n]


def bar_b_minus(spec: Misanthrope, n, rho: float) -> float:
    """Rate factor for a particle on a site holding ``n`` leaving into a reservoir at ``rho``."""
    th = equilibrium.marginal_for_density(rho, spec).probs
    return spec.rates[n, : th.size] @ th


def boundary_rate_tables(spec: Misanthrope, densities) -> tuple[np.ndarray, np.ndarray]:
    """Rows ``bplus[i, n] = bar_b_plus(rho_i, n)`` and ``bminus[i, n] = bar_b_minus(n, rho_i)``."""
    size = spec.n_table + 1
    bplus = np.zeros((len(densities), size))
    bminus = np.zeros((len(densities), size))
    for i, rho in enumerate(densities):
        th = equilibrium.marginal_for_density(rho, spec).probs
        bplus[i] = th @ spec.rates[: th.size, :]
        bminus[i] = spec.rates[:, : th.size] @ th
    return bplus, bminus


def _c_factor(spec: Overtaking, occ: Callable, x, alpha, j: int):
    d = spec.d
    val = 1 - occ(_shift(x, alpha, d, j))
    for i in range(j):
        val = val * occ(_shift(x, alpha, d, i))
    return val


def overtaking_rate(spec: Overtaking, eta: Mapping, x, alpha, j: int):
    """``beta_j^alpha`` times the indicator that ``x+j alpha`` is the first hole from an occupied ``x``."""
    a = direction_index(alpha, spec.d)
    if j < 1 or j > spec.J:
        return 0.0
    return spec.beta[a, j] * _c_factor(spec, eta.__getitem__, x, alpha, j)


def overtaking_boundary_rate(spec: Overtaking, eta: Mapping, lam: Mapping, x, alpha, j: int):
    """Reservoir-averaged overtaking rate and its kind.

    ``eta`` holds the in-domain occupations and ``lam`` the reservoir
    densities; a site belongs to the domain iff it is a key of ``eta``.
    Returns ``(rate, kind)`` with kind in jump / birth / death / none.
    """
    a = direction_index(alpha, spec.d)
    d = spec.d

    def occ(z):
        return eta[z] if z in eta else lam[z]

    src_in = x in eta
    dst_in = _shift(x, alpha, d, j) in eta
    kind = {(True, True): "jump", (False, True): "birth", (True, False): "death"}.get((src_in, dst_in), "none")
    if kind == "none" or j < 1 or j > spec.J:
        return 0.0, kind
    return spec.beta[a, j] * _c_factor(spec, occ, x, alpha, j), kind


def microscopic_flux(spec: ModelSpec, eta: Mapping) -> np.ndarray:
    """Instantaneous current through the origin, ``j(eta)``, as a length-d vector.

    ``eta`` maps sites (relative to the origin) to occupations, which may be
    arrays of samples.
    """
    d = spec.d
    origin = 0 if d == 1 else (0,) * d
    if isinstance(spec, Misanthrope):
        out = [0.0] * d
        for z, pz in zip(spec.kernel.offsets, spec.kernel.probs):
            y = _as_site(z, d)
            r = pz * spec.rates[eta[origin], eta[y]]
            out = [o + zi * r for o, zi in zip(out, z)]
        return np.array(out)
    out = [0.0] * d
    for a, alpha in spec.directions():
        for j in range(1, spec.J + 1):
            if spec.beta[a, j] == 0:
                continue
            r = spec.beta[a, j] * _c_factor(spec, eta.__getitem__, origin, alpha, j)
            out = [o + j * ai * r for o, ai in zip(out, alpha)]
    return np.array(out)


# ------------------------------------------------------------- model files


def _num(v) -> float:
    if isinstance(v, str):
        return float(Fraction(v.strip()))
    return float(v)


def model_from_dict(cfg: Mapping) -> ModelSpec:
    """Build a model from a parsed model description.

    Numbers may be given as strings (``"3/4"``, ``"0.1"``), parsed exactly
    with :class:`fractions.Fraction` before conversion.
    """
    kind = cfg.get("kind", "misanthrope")
    if kind == "overtaking":
        d = int(cfg.get("d", 1))
        weights = {}
        for key, vals in cfg["weights"].items():
            weights[_parse_direction(key, d)] = [_num(v) for v in vals]
        return Overtaking.from_weights(weights, d, name=cfg.get("name", "overtaking"))
    if kind != "misanthrope":
        raise ValueError(f"unknown model kind {kind!r}")
    kcfg = cfg.get("kernel", {"offsets": [[1]], "probs": [1]})
    kernel = JumpKernel(np.array(kcfg["offsets"], dtype=np.int64), np.array([_num(p) for p in kcfg["probs"]]))
    cap = cfg.get("capacity", 1)
    cap = None if str(cap).lower() in ("inf", "infinity", "none") else int(cap)
    rates = cfg.get("rates", "exclusion")
    if isinstance(rates, str):
        if rates == "exclusion":
            return simple_exclusion(kernel)
        if rates == "k_exclusion":
            return k_exclusion(cap, kernel)
        if rates == "zero_range":
            g = cfg.get("g", "indicator")
            gfun = (lambda n: float(n >= 1)) if g == "indicator" else (lambda n, s=[_num(v) for v in g]: s[min(n, len(s) - 1)])
            return zero_range(gfun, kernel, int(cfg.get("n_table", 256)))
        raise ValueError(f"unknown rate preset {rates!r}")
    table = np.array([[_num(v) for v in row] for row in rates])
    return Misanthrope(kernel, table, cap, cfg.get("name", "misanthrope"))


def _parse_direction(key: str, d: int):
    key = key.strip()
    sign = -1 if key.startswith("-") else 1
    body = key.lstrip("+-")
    axis = int(body[1:]) - 1 if body.startswith("e") else int(body) - 1
    e = [0] * d
    e[axis] = sign
    return tuple(e)


def load_model(path) -> ModelSpec:
    from .config import load_toml

    cfg = load_toml(Path(path))
    return model_from_dict(cfg.get("model", cfg))
