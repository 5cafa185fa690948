"""Bulk density of open systems from the boundary densities, phase diagrams and stationary profiles.

For boundary densities ``lam_a <= lam_b`` the bulk minimises the flux over
``[lam_a, lam_b]`` (maximises it over ``[lam_b, lam_a]`` otherwise), after
each endpoint is pushed outward across any flat piece of the flux it
touches.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .flux import FluxTable
from .pde import EntropyReport, l1_distance, solve_ibvp, stationary_audit

EPS_TIE = 1e-6
MERGE_TOL = 1e-7
SLOPE_TOL = 1e-6
LABELS = ("LD", "HD", "MC", "mC", "coexistence", "degenerate-flat")


# ------------------------------------------------------------ endpoints


def _extend(flux: FluxTable, lam: float, direction: int) -> float:
    seg = flux.flat_segment(lam)
    if seg is None:
        return float(lam)
    lo, hi = seg
    return float(hi if direction > 0 else lo)


def effective_endpoints(flux: FluxTable, lam_a: float, lam_b: float) -> tuple[float, float]:
    """Push each boundary density away from the other across a flat segment of ``f``."""
    for v in (lam_a, lam_b):
        if not 0 <= v <= flux.rho_max:
            raise ValueError(f"density {v} outside [0, {flux.rho_max}]")
    if lam_a <= lam_b:
        return _extend(flux, lam_a, -1), _extend(flux, lam_b, +1)
    return _extend(flux, lam_a, +1), _extend(flux, lam_b, -1)


# ------------------------------------------------------------ bulk


@dataclass(frozen=True)
class PhasePoint:
    lam_a: float
    lam_b: float
    lam_a_eff: float
    lam_b_eff: float
    extremizers: tuple  # isolated points and (lo, hi) intervals
    label: str
    bulk: float | None

    @property
    def unique(self) -> bool:
        return self.bulk is not None


def _candidates(flux: FluxTable, lo: float, hi: float):
    pts = [lo, hi]
    for x in flux.extrema:
        if lo < x < hi:
            pts.append(float(x))
    return np.array(pts)


def _merge_close(x: np.ndarray, tol: float) -> list:
    out = []
    for v in x:
        if not out or v - out[-1] > tol:
            out.append(float(v))
    return out


def bulk_density(flux: FluxTable, lam_a: float, lam_b: float, eps_tie: float = EPS_TIE) -> PhasePoint:
    """Extremizer set of ``f`` on the effective interval, with its phase label.

    The extremum over an interval is attained at an endpoint or at an
    interior local extremum, so those candidates suffice; flat segments of
    extremizers are returned as intervals.
    """
    la, lb = effective_endpoints(flux, lam_a, lam_b)
    lo, hi = min(la, lb), max(la, lb)
    minimise = lam_a <= lam_b
    if hi == lo:
        return PhasePoint(lam_a, lam_b, la, lb, (lo,), _label(flux, lo, la, lb), lo)
    if flux.is_flat(lo, hi):
        return PhasePoint(lam_a, lam_b, la, lb, ((lo, hi),), "degenerate-flat", None)
    cand = _candidates(flux, lo, hi)
    vals = np.asarray(flux(cand), dtype=float)
    best = vals.min() if minimise else vals.max()
    hit = np.abs(vals - best) <= eps_tie
    sel = _merge_close(np.sort(cand[hit]), MERGE_TOL * max(1.0, flux.rho_max))
    # group candidates joined by a flat segment at the extremal level
    groups = []
    for x in sel:
        seg = flux.flat_segment(x)
        if seg is not None:
            item = (max(seg[0], lo), min(seg[1], hi))
            if item[1] - item[0] <= 0:
                item = float(x)
        else:
            item = float(x)
        if item not in groups:
            groups.append(item)
    intervals = [g for g in groups if isinstance(g, tuple)]
    points = [g for g in groups if not isinstance(g, tuple) and not any(p <= g <= q for p, q in intervals)]
    ext = tuple(sorted(points + intervals, key=lambda g: g[0] if isinstance(g, tuple) else g))
    if intervals:
        return PhasePoint(lam_a, lam_b, la, lb, ext, "degenerate-flat", None)
    if len(points) > 1:
        return PhasePoint(lam_a, lam_b, la, lb, ext, "coexistence", None)
    r = points[0]
    return PhasePoint(lam_a, lam_b, la, lb, ext, _label(flux, r, la, lb), r)


def _label(flux: FluxTable, r: float, la: float, lb: float) -> str:
    tol = 1e-9 * max(1.0, flux.rho_max)
    for x, kind in zip(flux.extrema, flux.kinds):
        if abs(x - r) <= 1e-7 * max(1.0, flux.rho_max):
            if abs(r - la) > tol and abs(r - lb) > tol:
                return "MC" if kind > 0 else "mC"
    if abs(la - lb) <= tol:
        # equal data: label by the direction of transport at r; zero slope counts as LD
        s = float(flux.derivative(r))
        return "HD" if s < -SLOPE_TOL * max(flux.lipschitz, 1.0) else "LD"
    return "LD" if abs(r - la) <= abs(r - lb) else "HD"


# ---------------------------------------------------------- phase diagram


@dataclass
class PhaseDiagram:
    lam: np.ndarray  # grid values along both axes
    labels: np.ndarray  # object array of label strings, indexed [i_a, i_b]
    bulk: np.ndarray
    regions: dict = field(default_factory=dict)  # label -> number of connected components

    @property
    def n_phases(self) -> int:
        """Number of connected regions of the unique-bulk labels."""
        return int(sum(v for k, v in self.regions.items() if k in ("LD", "HD", "MC", "mC")))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda_a", "lambda_b", "bulk", "label"])
        for i, la in enumerate(self.lam):
            for j, lb in enumerate(self.lam):
                w.writerow([repr(float(la)), repr(float(lb)), repr(float(self.bulk[i, j])), self.labels[i, j]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "PhaseDiagram":
        rows = list(csv.DictReader(io.StringIO(text)))
        lam = np.unique([float(r["lambda_a"]) for r in rows])
        n = lam.size
        labels = np.empty((n, n), dtype=object)
        bulk = np.full((n, n), np.nan)
        idx = {v: i for i, v in enumerate(lam)}
        for r in rows:
            i, j = idx[float(r["lambda_a"])], idx[float(r["lambda_b"])]
            labels[i, j] = r["label"]
            bulk[i, j] = float(r["bulk"])
        return cls(lam, labels, bulk, count_regions(labels))


def count_regions(labels: np.ndarray) -> dict:
    """Connected components of each label on the grid.

    Phases use 4-neighbour connectivity; coexistence sets use 8-neighbour
    connectivity.
    """
    out = {}
    diag = np.ones((3, 3), dtype=int)
    for lab in LABELS:
        mask = labels == lab
        if mask.any():
            # ties sit on curves, which are only connected through corners
            _, n = ndimage.label(mask, structure=diag if lab == "coexistence" else None)
            out[lab] = int(n)
    return out


def phase_diagram(flux: FluxTable, resolution: int = 400, eps_tie: float = EPS_TIE) -> PhaseDiagram:
    """Classify every ``(lam_a, lam_b)`` on a uniform grid of ``[0, rho_max]^2``."""
    lam = np.linspace(0.0, flux.rho_max, resolution + 1)
    n = lam.size
    labels = np.empty((n, n), dtype=object)
    bulk = np.full((n, n), np.nan)
    for i, la in enumerate(lam):
        for j, lb in enumerate(lam):
            p = bulk_density(flux, float(la), float(lb), eps_tie)
            labels[i, j] = p.label
            if p.bulk is not None:
                bulk[i, j] = p.bulk
    return PhaseDiagram(lam, labels, bulk, count_regions(labels))


# ----------------------------------------------------- stationary profiles


@dataclass(frozen=True)
class StationaryProfile:
    breakpoints: np.ndarray
    values: np.ndarray
    lam_a: float
    lam_b: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(self.breakpoints, x, side="right") - 1, 0, self.values.size - 1)
        return self.values[idx]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x_left", "x_right", "rho"])
        for k, v in enumerate(self.values):
            w.writerow([repr(float(self.breakpoints[k])), repr(float(self.breakpoints[k + 1])), repr(float(v))])
        return buf.getvalue()


def _in_extremizers(ph: PhasePoint, r: float, tol: float = 1e-7) -> bool:
    for g in ph.extremizers:
        if isinstance(g, tuple):
            if g[0] - tol <= r <= g[1] + tol:
                return True
        elif abs(g - r) <= tol:
            return True
    return False


def build_stationary_profile(flux: FluxTable, lam_a: float, lam_b: float, breakpoints, values) -> StationaryProfile:
    """Validate a step profile built from extremizers, monotone in the flux-aware order."""
    x = np.asarray(breakpoints, dtype=float)
    v = np.asarray(values, dtype=float)
    if x.size != v.size + 1 or np.any(np.diff(x) <= 0):
        raise ValueError("need strictly increasing breakpoints, one more than values")
    ph = bulk_density(flux, lam_a, lam_b)
    for r in v:
        if not _in_extremizers(ph, float(r)):
            raise ValueError(f"value {r} is not an extremizer for ({lam_a}, {lam_b})")
    up = lam_a <= lam_b
    for r0, r1 in zip(v[:-1], v[1:]):
        ok = (r0 <= r1 if up else r0 >= r1) or flux.is_flat(r0, r1)
        if not ok:
            raise ValueError("profile violates the monotone order required by the boundary data")
    return StationaryProfile(x, v, float(lam_a), float(lam_b))


@dataclass
class StationaryCheck:
    audit: EntropyReport
    drift: float
    crossing_time: float

    @property
    def passed(self) -> bool:
        return self.audit.passed


def verify_stationary(profile: StationaryProfile, flux: FluxTable, M: float | None = None, dx: float = 1 / 400,
                      cfl: float = 0.5) -> StationaryCheck:
    """Spatial entropy audit plus the L1 drift after one crossing time of evolution."""
    audit = stationary_audit(profile.breakpoints, profile.values, profile.lam_a, profile.lam_b, flux, M=M)
    a, b = float(profile.breakpoints[0]), float(profile.breakpoints[-1])
    lip = flux.lipschitz
    t_cross = (b - a) / lip if lip > 0 else 0.0
    if t_cross > 0:
        tr = solve_ibvp(profile, profile.lam_a, profile.lam_b, flux, t_cross, dx, cfl, a, b)
        drift = l1_distance(tr.final, tr.u[0], tr.dx)
    else:
        drift = 0.0
    return StationaryCheck(audit, drift, t_cross)


# ------------------------------------------------------- perturbed domains


@dataclass(frozen=True)
class RegionPrediction:
    """Predicted density bands: ``bulk`` on the inner slab, intervals on the two collars."""

    bulk: float | None
    collar_a: tuple
    collar_b: tuple
    extends_a: bool
    extends_b: bool


def perturbed_domain_prediction(flux: FluxTable, lam_a: float, lam_b: float, domain=None) -> RegionPrediction:
    """Bands for a domain squeezed between two slabs.

    The collar next to the ``a`` side carries densities between the
    effective left value and the bulk, the one next to ``b`` between the
    bulk and the effective right value; a collar band collapses to the
    bulk when the bulk equals that side's boundary density.
    """
    ph = bulk_density(flux, lam_a, lam_b)
    if ph.bulk is None:
        return RegionPrediction(None, (ph.lam_a_eff, ph.lam_b_eff), (ph.lam_a_eff, ph.lam_b_eff), False, False)
    r = ph.bulk
    ext_a = abs(r - lam_a) <= 1e-9
    ext_b = abs(r - lam_b) <= 1e-9
    band_a = (r, r) if ext_a else (min(ph.lam_a_eff, r), max(ph.lam_a_eff, r))
    band_b = (r, r) if ext_b else (min(r, ph.lam_b_eff), max(r, ph.lam_b_eff))
    if domain is not None and hasattr(domain, "inner"):
        if domain.a_outer == domain.inner.a:
            band_a = (r, r)
        if domain.b_outer == domain.inner.b:
            band_b = (r, r)
    return RegionPrediction(r, band_a, band_b, ext_a, ext_b)
