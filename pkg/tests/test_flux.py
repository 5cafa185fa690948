import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openlattice import models
from openlattice.flux import FluxTable, godunov_flux, model_flux, overtaking_flux
from openlattice.models import JumpKernel

TASEP = FluxTable.from_function(lambda r: r * (1 - r), 1.0)


def brute_godunov(u, v, f, n=20001):
    s = np.linspace(min(u, v), max(u, v), n)
    vals = f(s)
    return vals.min() if u <= v else vals.max()


# ---------------------------------------------------------------- closed forms


@pytest.mark.parametrize("p", [1.0, 0.7, 0.5])
def test_exclusion_flux(p):
    spec = models.simple_exclusion(JumpKernel.nearest_neighbour(p))
    for rho in (0.0, 0.2, 0.5, 0.9):
        assert model_flux(spec, rho)[0] == pytest.approx((2 * p - 1) * rho * (1 - rho), abs=1e-12)


def test_zero_range_constant_rate_flux():
    spec = models.zero_range(lambda n: float(n >= 1))
    for rho in (0.0, 0.5, 1.0, 3.0):
        assert model_flux(spec, rho)[0] == pytest.approx(rho / (1 + rho), abs=1e-11)


@pytest.mark.parametrize("K", [2, 3])
def test_k_exclusion_flux_against_binomial_sum(K):
    spec = models.k_exclusion(K)
    for rho in (0.3, 1.0, 0.8 * K):
        p = rho / K
        th = [math.comb(K, n) * p**n * (1 - p) ** (K - n) for n in range(K + 1)]
        want = sum(th[n] * th[m] * n * (K - m) for n in range(K + 1) for m in range(K + 1))
        assert model_flux(spec, rho)[0] == pytest.approx(want, rel=1e-10)
        assert want == pytest.approx(rho * (K - rho), rel=1e-12)


@pytest.mark.parametrize("weights", [{(1,): [2.0, 1.0]}, {(1,): [1.0, 0.5, 0.25], (-1,): [0.5]}])
def test_overtaking_flux_is_product_expectation_of_current(weights):
    spec = models.Overtaking.from_weights(weights)
    L = 2 * spec.J + 1
    for rho in (0.1, 0.45, 0.8):
        want = 0.0
        for bits in itertools.product((0, 1), repeat=L):
            w = math.prod(rho if b else 1 - rho for b in bits)
            eta = {i - spec.J: b for i, b in enumerate(bits)}
            want += w * models.microscopic_flux(spec, eta)[0]
        assert overtaking_flux(spec, rho)[0] == pytest.approx(want, abs=1e-12)


def test_overtaking_flux_two_dimensional():
    spec = models.Overtaking.from_weights({(1, 0): [1.0], (0, 1): [0.5], (0, -1): [0.5]}, d=2)
    np.testing.assert_allclose(overtaking_flux(spec, 0.3), [0.21, 0.0], atol=1e-15)


def test_table_for_model_matches_exact():
    spec = models.k_exclusion(2)
    tab = FluxTable.for_model(spec)
    r = np.linspace(0, 2, 37)
    np.testing.assert_allclose(tab(r), r * (2 - r), atol=1e-12)
    assert tab.extrema == pytest.approx([1.0], abs=1e-7) and list(tab.kinds) == [1]


def test_unbounded_model_needs_cap():
    with pytest.raises(ValueError):
        FluxTable.for_model(models.zero_range(lambda n: float(n >= 1)))


# ---------------------------------------------------------------- Godunov


def test_godunov_examples():
    assert godunov_flux(0.8, 0.2, TASEP) == pytest.approx(0.25)
    assert godunov_flux(0.2, 0.6, TASEP) == pytest.approx(0.16)
    for u in (0.0, 0.3, 1.0):
        assert godunov_flux(u, u, TASEP) == pytest.approx(TASEP(u))


def test_godunov_two_humps():
    f = lambda r: np.sin(2 * np.pi * r) ** 2 / 4  # noqa: E731
    tab = FluxTable.from_function(f, 1.0)
    assert godunov_flux(0.1, 0.9, tab) == pytest.approx(0.0, abs=1e-12)
    assert godunov_flux(0.9, 0.1, tab) == pytest.approx(0.25, abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_godunov_matches_brute_force(u, v):
    f = lambda r: np.sin(2 * np.pi * r) ** 2 / 4 - 0.1 * r  # noqa: E731
    tab = FluxTable.from_function(f, 1.0)
    assert godunov_flux(u, v, tab) == pytest.approx(brute_godunov(u, v, f), abs=1e-8)


@settings(max_examples=80, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_godunov_monotone(u, v, w):
    # nondecreasing in the first slot, nonincreasing in the second
    lo, hi = sorted((u, w))
    assert godunov_flux(lo, v, TASEP) <= godunov_flux(hi, v, TASEP) + 1e-15
    assert godunov_flux(v, lo, TASEP) >= godunov_flux(v, hi, TASEP) - 1e-15


# -------------------------------------------------------- shape and export


def test_flat_segments_detected():
    f = lambda r: np.clip(np.minimum(r, 1 - r), 0, 0.3)  # noqa: E731
    tab = FluxTable.from_function(f, 1.0)
    seg = tab.flat_segment(0.5)
    assert seg is not None and seg[0] == pytest.approx(0.3, abs=1e-9) and seg[1] == pytest.approx(0.7, abs=1e-9)
    assert tab.is_flat(0.35, 0.65) and not tab.is_flat(0.2, 0.5)
    assert TASEP.flats == ()


def test_csv_round_trip():
    tab = FluxTable.for_model(models.simple_exclusion(), d_rho=0.01)
    back = FluxTable.from_csv(tab.to_csv())
    np.testing.assert_array_equal(back.grid, tab.grid)
    np.testing.assert_array_equal(back.values, tab.values)
    assert tab.to_csv().splitlines()[0] == "rho,f"
    with pytest.raises(ValueError):
        FluxTable.from_csv("a,b\n0,0\n")


def test_samples_validation():
    with pytest.raises(ValueError):
        FluxTable.from_samples([0, 0.5, 0.4], [0, 1, 2])
    with pytest.raises(ValueError):
        FluxTable.from_samples([0, 1], [0, np.nan])
