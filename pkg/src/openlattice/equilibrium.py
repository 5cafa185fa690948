"""One-site equilibrium marginals of product invariant measures.

The marginal with chemical potential ``beta`` has weights
``beta**n / (q(1) ... q(n))`` with ``q(n) = b(n, 0) / b(1, n - 1)``.
Everything here works in log space so that large ``beta`` or long
truncated tails (capacity ``None``) do not overflow.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

TAIL_MASS = 1e-14
DENSITY_TOL = 1e-10


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SiteMarginal:
    """Equilibrium law of one site occupation."""

    probs: np.ndarray
    beta: float

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs))

    @property
    def k_eff(self) -> int:
        return self.probs.size - 1

    @property
    def mean(self) -> float:
        return float(np.arange(self.probs.size) @ self.probs)

    @property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c

    def padded(self, size: int) -> np.ndarray:
        out = np.zeros(size)
        out[: self.probs.size] = self.probs
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "prob"])
        for n, p in enumerate(self.probs):
            w.writerow([n, repr(float(p))])
        return buf.getvalue()


@dataclass(frozen=True)
class CoupledMarginal:
    """Joint law of ``(F_rho^{-1}(U), F_c^{-1}(U))`` for one uniform ``U``."""

    joint: np.ndarray
    left_density: float
    right_density: float

    def __post_init__(self):
        object.__setattr__(self, "joint", _frozen(self.joint))

    @property
    def left(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    @property
    def right(self) -> np.ndarray:
        return self.joint.sum(axis=0)


def _log_weights(beta: float, model) -> np.ndarray:
    n = np.arange(model.n_table + 1)
    with np.errstate(divide="ignore"):
        return n * math.log(beta) - model.log_qfact


def marginal_from_beta(beta: float, model) -> SiteMarginal:
    """Equilibrium marginal with chemical potential ``beta``.

    For finite capacity ``beta = inf`` gives the point mass at the capacity.
    For unbounded occupations the series is cut at the first index whose
    tail mass drops below ``TAIL_MASS`` and renormalised.
    """
    if not beta >= 0:
        raise ValueError(f"chemical potential must be >= 0, got {beta}")
    K = model.capacity
    if beta == 0:
        p = np.zeros(1 if K is None else K + 1)
        p[0] = 1.0
        return SiteMarginal(p, 0.0)
    if math.isinf(beta):
        if K is None:
            raise ValueError("infinite chemical potential needs a finite capacity")
        p = np.zeros(K + 1)
        p[K] = 1.0
        return SiteMarginal(p, math.inf)
    if K is None and beta >= model.q_sup:
        raise ValueError(
            f"beta={beta} outside the convergence range [0, {model.q_sup})"
        )
    logw = _log_weights(beta, model)
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()
    if K is not None:
        return SiteMarginal(w, float(beta))
    # geometric bound on the mass beyond the table
    ratio = beta / model.q_sup
    beyond = w[-1] * ratio / (1.0 - ratio)
    if beyond >= TAIL_MASS:
        raise ValueError(
            f"normaliser at beta={beta} not resolved by a table of size {model.n_table}"
        )
    tail = np.cumsum(w[::-1])[::-1]  # tail[n] = mass of {>= n}
    above = np.append(tail[1:], 0.0) + beyond
    k_eff = int(np.argmax(above < TAIL_MASS))
    p = w[: k_eff + 1] / w[: k_eff + 1].sum()
    return SiteMarginal(p, float(beta))


def mean_from_beta(beta: float, model) -> float:
    return marginal_from_beta(beta, model).mean


def max_density(model) -> float:
    """Supremum of achievable densities."""
    if model.capacity is not None:
        return float(model.capacity)
    return math.inf


def density_to_beta(rho: float, model) -> float:
    """Invert the increasing map from chemical potential to density."""
    K = model.capacity
    if rho < 0 or (K is not None and rho > K):
        raise ValueError(f"density {rho} outside [0, {K}]")
    if rho == 0:
        return 0.0
    if K is not None and rho == K:
        return math.inf

    def resid(beta):
        return mean_from_beta(beta, model) - rho

    hi = 1.0
    if K is not None:
        while resid(hi) <= 0:
            hi *= 2.0
    else:
        # approach the radius of convergence without crossing it; back off
        # towards the last good point where the truncated table is too short
        q = model.q_sup
        hi = min(hi, 0.5 * q)
        good = 0.0
        while True:
            try:
                r = resid(hi)
            except ValueError:
                if hi - good < 1e-12 * q:
                    raise ValueError(f"density {rho} is not achievable") from None
                hi = 0.5 * (good + hi)
                continue
            if r > 0:
                break
            good = hi
            hi = 0.5 * (hi + q)
            if q - hi < 1e-12 * q:
                raise ValueError(f"density {rho} is not achievable")
    beta = brentq(resid, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(resid(beta)) >= DENSITY_TOL:
        raise ArithmeticError(f"inversion at density {rho} did not converge")
    return float(beta)


def marginal_for_density(rho: float, model) -> SiteMarginal:
    return marginal_from_beta(density_to_beta(rho, model), model)


def sample_site(m: SiteMarginal, u):
    """Generalised inverse CDF, ``min{n : F(n) >= u}``; vectorised over ``u``."""
    idx = np.searchsorted(m.cdf, u, side="left")
    idx = np.minimum(idx, m.k_eff)
    if np.ndim(idx) == 0:
        return int(idx)
    return idx


def coupled_marginal(rho: float, c: float, model) -> CoupledMarginal:
    """Quantile coupling of two marginals, built by sweeping U through breakpoints."""
    m1 = marginal_for_density(rho, model)
    m2 = marginal_for_density(c, model)
    size = max(m1.probs.size, m2.probs.size)
    cuts = np.unique(np.concatenate([[0.0, 1.0], m1.cdf, m2.cdf]))
    joint = np.zeros((size, size))
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi <= lo:
            continue
        mid = 0.5 * (lo + hi)
        joint[sample_site(m1, mid), sample_site(m2, mid)] += hi - lo
    return CoupledMarginal(joint, float(rho), float(c))
