"""Macroscopic domains and their lattice discretisations.

Directions orthogonal to the slab normal are periodic with macroscopic
width ``W``, so a slab ``{a < n.x < b}`` becomes a finite torus-by-interval
on the lattice.  Only axis-aligned normals can be discretised.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class SlabDomain:
    normal: tuple
    a: float
    b: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if not np.isclose(np.linalg.norm(n), 1.0, atol=1e-12):
            raise ValueError("slab normal must be a unit vector")
        if not self.a < self.b:
            raise ValueError("slab needs a < b")
        object.__setattr__(self, "normal", tuple(float(v) for v in n))

    @property
    def d(self) -> int:
        return len(self.normal)

    @property
    def a_outer(self) -> float:
        return self.a

    @property
    def b_outer(self) -> float:
        return self.b

    @property
    def inner(self) -> "SlabDomain":
        return self

    def contains(self, pts) -> np.ndarray:
        s = slab_coordinates(self, pts)
        return (s > self.a) & (s < self.b)


@dataclass(frozen=True)
class PerturbedDomain:
    """A domain squeezed between the inner slab ``(a, b)`` and the outer slab ``(a', b')``.

    ``predicate`` receives macroscopic points of shape ``(M, d)``.
    """

    inner: SlabDomain
    a_outer: float
    b_outer: float
    predicate: Callable = field(compare=False)
    name: str = "perturbed"

    def __post_init__(self):
        if not (self.a_outer <= self.inner.a < self.inner.b <= self.b_outer):
            raise ValueError("need a' <= a < b <= b'")

    @property
    def normal(self):
        return self.inner.normal

    @property
    def a(self):
        return self.inner.a

    @property
    def b(self):
        return self.inner.b

    @property
    def d(self):
        return self.inner.d

    def contains(self, pts) -> np.ndarray:
        return np.asarray(self.predicate(np.atleast_2d(pts)), dtype=bool)

    def check_nesting(self, n_samples: int = 2000, seed: int = 0, width: float = 1.0) -> bool:
        rng = np.random.default_rng(seed)
        d = self.d
        lo = self.a_outer - 0.5
        hi = self.b_outer + 0.5
        pts = rng.uniform(0, width, size=(n_samples, d))
        axis = int(np.argmax(np.abs(self.normal)))
        pts[:, axis] = rng.uniform(lo, hi, n_samples) * np.sign(self.normal[axis])
        inside = self.contains(pts)
        inner = self.inner.contains(pts)
        outer = SlabDomain(self.normal, self.a_outer, self.b_outer).contains(pts)
        return bool(np.all(inner <= inside) and np.all(inside <= outer))


def _window_mask(t, window, width):
    lo, hi = window
    t = np.mod(t, width)
    return (t > lo * width) & (t < hi * width)


def notched_slab(a=0.0, b=1.0, depth=0.2, window=(0.3, 0.7), width=1.0, d=2) -> PerturbedDomain:
    """Slab whose left wall sits at ``a - depth`` except on a transverse window where it is cut back to ``a``.

    The region ``a - depth < x_1 <= a`` outside the window is the collar.
    """
    inner = SlabDomain((1.0,) + (0.0,) * (d - 1), a, b)

    def pred(p):
        x1 = p[:, 0]
        notch = _window_mask(p[:, 1], window, width)
        left = np.where(notch, a, a - depth)
        return (x1 > left) & (x1 < b)

    return PerturbedDomain(inner, a - depth, b, pred, "notched")


def bumped_slab(a=0.0, b=1.0, depth=0.2, window=(0.3, 0.7), width=1.0, d=2) -> PerturbedDomain:
    """Slab whose left wall bulges out to ``a - depth`` on a transverse window."""
    inner = SlabDomain((1.0,) + (0.0,) * (d - 1), a, b)

    def pred(p):
        x1 = p[:, 0]
        bump = _window_mask(p[:, 1], window, width)
        left = np.where(bump, a - depth, a)
        return (x1 > left) & (x1 < b)

    return PerturbedDomain(inner, a - depth, b, pred, "bumped")


def slab_coordinates(domain, x) -> np.ndarray | float:
    """Projection ``n . x`` onto the slab normal."""
    n = np.asarray(domain.normal, dtype=float)
    x = np.asarray(x, dtype=float)
    out = x @ n if x.ndim > 0 else x * n[0]
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class LatticeDomain:
    """Sites ``Omega_N``, their reservoir shell and (optionally) the reservoir densities.

    ``sites`` and ``shell`` are integer arrays of shape ``(n, d)``;
    transverse coordinates live in ``[0, period)``.  ``shell_side`` is 0 for
    the ``a`` boundary component and 1 for the ``b`` one.
    """

    N: int
    domain: object
    sites: np.ndarray
    shell: np.ndarray
    shell_side: np.ndarray
    range_: int
    period: int | None
    axis: int
    lam: np.ndarray | None = None
    _index: dict = field(default=None, repr=False, compare=False)

    @property
    def d(self) -> int:
        return self.sites.shape[1]

    @property
    def n_sites(self) -> int:
        return self.sites.shape[0]

    @property
    def n_shell(self) -> int:
        return self.shell.shape[0]

    @property
    def width(self) -> float:
        return 1.0 if self.period is None or self.d == 1 else self.period / self.N

    def wrap(self, pts) -> np.ndarray:
        pts = np.array(pts, dtype=np.int64, copy=True)
        if self.period is not None:
            for k in range(self.d):
                if k != self.axis:
                    pts[..., k] %= self.period
        return pts

    def index(self) -> dict:
        """Map from wrapped point tuple to combined index (sites first, then shell)."""
        if self._index is None:
            idx = {tuple(p): i for i, p in enumerate(self.sites.tolist())}
            ns = self.n_sites
            idx.update({tuple(p): ns + k for k, p in enumerate(self.shell.tolist())})
            object.__setattr__(self, "_index", idx)
        return self._index

    def lookup(self, pts) -> np.ndarray:
        """Combined indices of lattice points, -1 when outside sites and shell."""
        idx = self.index()
        w = self.wrap(np.atleast_2d(pts))
        return np.array([idx.get(tuple(p), -1) for p in w.tolist()], dtype=np.int64)

    def macro(self, pts) -> np.ndarray:
        return np.asarray(pts, dtype=float) / self.N

    def normal_coord(self, pts) -> np.ndarray:
        return slab_coordinates(self.domain, self.macro(pts))

    def with_reservoir(self, lam) -> "LatticeDomain":
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (self.n_shell,):
            raise ValueError("reservoir field must have one value per shell site")
        lam = lam.copy()
        lam.setflags(write=False)
        return replace(self, lam=lam, _index=self._index)


def _axis_of(normal) -> int:
    n = np.asarray(normal, dtype=float)
    axis = int(np.argmax(np.abs(n)))
    if not np.isclose(abs(n[axis]), 1.0):
        raise NotImplementedError("lattice discretisation needs an axis-aligned slab normal")
    return axis


def discretize(domain, N: int, kernel_range: int, width: float = 1.0) -> LatticeDomain:
    """Lattice sites ``{x : x/N in Omega}`` and the shell within sup-distance ``kernel_range``."""
    if N < 2:
        raise ValueError("N must be >= 2")
    d = domain.d
    axis = _axis_of(domain.normal)
    sgn = np.sign(domain.normal[axis])
    R = int(kernel_range)
    lo_m, hi_m = sorted((sgn * domain.a_outer * N, sgn * domain.b_outer * N))
    lo = int(np.floor(lo_m)) - R - 1
    hi = int(np.ceil(hi_m)) + R + 1
    period = None
    ranges = []
    for k in range(d):
        if k == axis:
            ranges.append(np.arange(lo, hi + 1))
        else:
            period = int(round(width * N))
            ranges.append(np.arange(period))
    box = np.array(list(itertools.product(*ranges)), dtype=np.int64) if d > 1 else ranges[0][:, None]
    inside = domain.contains(box / N)
    sites = box[inside]
    if sites.shape[0] == 0:
        raise ValueError("domain has no lattice sites at this N")
    offs = np.array(list(itertools.product(range(-R, R + 1), repeat=d)), dtype=np.int64)
    cand = (sites[:, None, :] + offs[None, :, :]).reshape(-1, d)
    if period is not None:
        for k in range(d):
            if k != axis:
                cand[:, k] %= period
    cand = np.unique(cand, axis=0)
    site_set = {tuple(p) for p in sites.tolist()}
    shell = np.array([p for p in cand.tolist() if tuple(p) not in site_set], dtype=np.int64).reshape(-1, d)
    side = _classify_shell(shell, domain, N, period, axis)
    return LatticeDomain(N, domain, sites, shell, side, R, period, axis)


def _classify_shell(shell, domain, N, period, axis) -> np.ndarray:
    """Label connected components of the shell by the boundary they hug."""
    m = shell.shape[0]
    if m == 0:
        return np.zeros(0, dtype=np.int64)
    d = shell.shape[1]
    idx = {tuple(p): i for i, p in enumerate(shell.tolist())}
    offs = [o for o in itertools.product((-1, 0, 1), repeat=d) if any(o)]
    comp = -np.ones(m, dtype=np.int64)
    n_comp = 0
    for s in range(m):
        if comp[s] >= 0:
            continue
        stack = [s]
        comp[s] = n_comp
        while stack:
            i = stack.pop()
            p = shell[i]
            for o in offs:
                q = p + o
                if period is not None:
                    for k in range(d):
                        if k != axis:
                            q[k] %= period
                j = idx.get(tuple(q))
                if j is not None and comp[j] < 0:
                    comp[j] = n_comp
                    stack.append(j)
        n_comp += 1
    coord = slab_coordinates(domain, shell / N)
    mid = 0.5 * (domain.a + domain.b)
    side = np.empty(m, dtype=np.int64)
    for c in range(n_comp):
        sel = comp == c
        side[sel] = 0 if coord[sel].mean() < mid else 1
    return side


def torus(N: int, d: int = 1) -> LatticeDomain:
    """Closed periodic box ``(Z / N Z)^d`` with an empty shell."""
    sites = np.array(list(itertools.product(range(N), repeat=d)), dtype=np.int64).reshape(-1, d)
    dom = SlabDomain((1.0,) + (0.0,) * (d - 1), 0.0, 1.0)
    lat = LatticeDomain(N, dom, sites, np.zeros((0, d), dtype=np.int64), np.zeros(0, dtype=np.int64), 0, N, -1)
    return lat.with_reservoir(np.zeros(0))


def reservoir_from_profile(lattice: LatticeDomain, lambda_fn: Callable, capacity=None) -> LatticeDomain:
    """Set ``lambda_N(x) = lambda(x / N)`` on the shell."""
    vals = np.asarray(lambda_fn(lattice.macro(lattice.shell)), dtype=float).reshape(-1)
    if vals.shape != (lattice.n_shell,):
        raise ValueError("lambda_fn must return one value per point")
    top = np.inf if capacity is None else capacity
    if np.any(vals < 0) or np.any(vals > top):
        raise ValueError("reservoir density outside [0, K]")
    return lattice.with_reservoir(vals)


def slab_datum(domain, lam_a: float, lam_b: float) -> Callable:
    """``lambda_a`` on the ``n.x <= a`` side and ``lambda_b`` on the ``n.x >= b`` side."""

    def fn(pts):
        s = slab_coordinates(domain, pts)
        return np.where(s <= 0.5 * (domain.a + domain.b), lam_a, lam_b)

    return fn


def two_sided_reservoir(lattice: LatticeDomain, lam_a: float, lam_b: float, capacity=None) -> LatticeDomain:
    """Reservoir from the boundary-component classification of the shell."""
    vals = np.where(lattice.shell_side == 0, lam_a, lam_b).astype(float)
    top = np.inf if capacity is None else capacity
    if np.any(vals < 0) or np.any(vals > top):
        raise ValueError("reservoir density outside [0, K]")
    return lattice.with_reservoir(vals)


def uniform_reservoir(lattice: LatticeDomain, c: float) -> LatticeDomain:
    return lattice.with_reservoir(np.full(lattice.n_shell, float(c)))
