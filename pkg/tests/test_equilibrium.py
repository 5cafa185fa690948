import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openlattice import equilibrium as eq
from openlattice import models

SEP = models.simple_exclusion()
K3 = models.k_exclusion(3)
ZR = models.zero_range(lambda n: float(n >= 1))


def test_sep_marginal_from_beta():
    m = eq.marginal_from_beta(3 / 7, SEP)
    np.testing.assert_allclose(m.probs, [0.7, 0.3], atol=1e-12)
    assert m.mean == pytest.approx(0.3, abs=1e-12)


def test_zero_beta_is_empty_site():
    for model in (SEP, K3, ZR):
        m = eq.marginal_from_beta(0.0, model)
        assert m.probs[0] == 1.0 and m.mean == 0.0


def test_zero_range_geometric():
    m = eq.marginal_from_beta(0.5, ZR)
    n = np.arange(m.probs.size)
    np.testing.assert_allclose(m.probs, 0.5 * 0.5**n, atol=1e-13)
    assert m.mean == pytest.approx(1.0, abs=1e-12)


def test_density_to_beta_examples():
    assert eq.density_to_beta(0.3, SEP) == pytest.approx(3 / 7, rel=1e-13)
    assert eq.density_to_beta(0.0, SEP) == 0.0
    assert eq.density_to_beta(1.0, ZR) == pytest.approx(0.5, rel=1e-12)
    assert math.isinf(eq.density_to_beta(1.0, SEP))


def test_k_exclusion_marginal_is_binomial():
    rho = 1.2
    m = eq.marginal_for_density(rho, K3)
    p = rho / 3
    binom = [math.comb(3, n) * p**n * (1 - p) ** (3 - n) for n in range(4)]
    np.testing.assert_allclose(m.probs, binom, atol=1e-12)


def test_density_outside_range_rejected():
    with pytest.raises(ValueError):
        eq.density_to_beta(1.5, SEP)
    with pytest.raises(ValueError):
        eq.density_to_beta(-0.1, ZR)


def test_sample_site_examples():
    m = eq.marginal_for_density(0.3, SEP)
    assert eq.sample_site(m, 0.5) == 0
    assert eq.sample_site(m, 0.9) == 1
    assert eq.sample_site(m, 0.0) == 0
    np.testing.assert_array_equal(eq.sample_site(m, np.array([0.1, 0.75])), [0, 1])


def test_coupled_marginal_sep_example():
    cm = eq.coupled_marginal(0.2, 0.5, SEP)
    np.testing.assert_allclose(cm.joint, [[0.5, 0.3], [0.0, 0.2]], atol=1e-12)


def test_coupled_marginal_diagonal_when_equal():
    cm = eq.coupled_marginal(1.1, 1.1, K3)
    m = eq.marginal_for_density(1.1, K3)
    assert np.allclose(cm.joint, np.diag(np.diag(cm.joint)), atol=0)
    np.testing.assert_allclose(np.diag(cm.joint), m.probs, atol=1e-12)


def test_coupled_marginal_zero_range_ordered():
    cm = eq.coupled_marginal(0.5, 1.0, ZR)
    n, m = np.nonzero(cm.joint > 0)
    assert np.all(n <= m)
    size = cm.joint.shape[0]
    np.testing.assert_allclose(cm.left, eq.marginal_for_density(0.5, ZR).padded(size), atol=1e-12)
    np.testing.assert_allclose(cm.right, eq.marginal_for_density(1.0, ZR).padded(size), atol=1e-12)


def test_csv_export():
    text = eq.marginal_for_density(0.3, SEP).to_csv()
    assert text.splitlines()[0] == "n,prob"
    assert len(text.splitlines()) == 3


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["sep", "k3", "zr"]), st.floats(0.0, 1.0))
def test_marginal_invariants(name, frac):
    model = {"sep": SEP, "k3": K3, "zr": ZR}[name]
    top = 4.0 if model.capacity is None else float(model.capacity)
    rho = frac * top
    m = eq.marginal_for_density(rho, model)
    assert np.all(m.probs >= 0)
    assert m.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert m.mean == pytest.approx(rho, abs=1e-9)
    assert np.all(np.diff(m.cdf) >= 0) and m.cdf[-1] == 1.0


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["sep", "k3", "zr"]), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_coupled_marginal_properties(name, a, b):
    model = {"sep": SEP, "k3": K3, "zr": ZR}[name]
    top = 3.0 if model.capacity is None else float(model.capacity)
    rho, c = a * top, b * top
    cm = eq.coupled_marginal(rho, c, model)
    size = cm.joint.shape[0]
    np.testing.assert_allclose(cm.left, eq.marginal_for_density(rho, model).padded(size), atol=1e-12)
    np.testing.assert_allclose(cm.right, eq.marginal_for_density(c, model).padded(size), atol=1e-12)
    n, m = np.nonzero(cm.joint > 0)
    if rho <= c:
        assert np.all(n <= m)
    if rho >= c:
        assert np.all(n >= m)
