import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openlattice import models
from openlattice.flux import FluxTable, overtaking_flux
from openlattice.pde import (
    MaximumPrincipleViolation,
    Trajectory,
    check_mass_balance,
    entropy_audit,
    l1_distance,
    solve_ibvp,
    solve_slab,
    stationary_audit,
)

TASEP = FluxTable.from_function(lambda r: r * (1 - r), 1.0)


def step(left, right, x0=0.5):
    return lambda x: np.where(x < x0, left, right)


def crossing(traj, level):
    u = traj.final
    i = int(np.argmax(np.diff(np.sign(u - level)) != 0))
    x = traj.centers
    return x[i] + (level - u[i]) * (x[i + 1] - x[i]) / (u[i + 1] - u[i])


def test_constant_state_is_steady():
    tr = solve_ibvp(0.3, 0.3, 0.3, TASEP, 1.0, 1 / 100)
    np.testing.assert_allclose(tr.final, 0.3, atol=1e-14)


def test_shock_speed():
    tr = solve_ibvp(step(0.3, 0.8), 0.3, 0.8, TASEP, 1.0, 1 / 400)
    assert crossing(tr, 0.55) == pytest.approx(0.4, abs=2 / 400)


def test_rarefaction_fan():
    tr = solve_ibvp(step(0.7, 0.3, 0.0), 0.7, 0.3, TASEP, 0.5, 1 / 400, a=-1.0, b=1.0)
    exact = np.clip((1 - tr.centers / 0.5) / 2, 0.3, 0.7)
    assert l1_distance(tr.final, exact, tr.dx) < 5e-3


def test_requested_times_hit_exactly():
    tr = solve_ibvp(0.5, 0.5, 0.5, TASEP, 1.0, 1 / 50, times=[0.123, 0.5])
    assert 0.123 in tr.times.tolist() and 0.5 in tr.times.tolist() and tr.times[-1] == 1.0


def test_mass_balance_with_boundary_flow():
    tr = solve_ibvp(0.1, 0.9, 0.05, TASEP, 2.0, 1 / 200)
    assert check_mass_balance(tr) < 1e-12
    assert not np.allclose(tr.mass()[0], tr.mass()[-1])


def test_invalid_arguments():
    with pytest.raises(ValueError):
        solve_ibvp(0.5, 0.5, 0.5, TASEP, 1.0, 1 / 10, cfl=1.5)
    with pytest.raises(ValueError):
        solve_ibvp(0.5, 1.2, 0.5, TASEP, 1.0, 1 / 10)
    with pytest.raises(ValueError):
        solve_ibvp(0.5, 0.5, 0.5, TASEP, 1.0, 0.3)
    with pytest.raises(ValueError):
        solve_ibvp(0.5, 0.5, 0.5, TASEP, 1.0, 1 / 10, M=0.5)


def test_too_large_step_breaks_maximum_principle():
    with pytest.raises(MaximumPrincipleViolation):
        # M far below the true speed is rejected; forge it through a tiny Lipschitz table
        tab = FluxTable(TASEP.grid, TASEP.values, TASEP.func, TASEP.eps_flat, 0.05,
                        TASEP.extrema, TASEP.kinds, TASEP.ext_values, TASEP.flats)
        solve_ibvp(step(1.0, 0.0), 1.0, 0.0, tab, 0.5, 1 / 50, cfl=0.9)


piecewise = st.lists(st.floats(0, 1), min_size=4, max_size=4)


def _piecewise(vals):
    v = np.asarray(vals)
    return lambda x: v[np.minimum((np.asarray(x) * v.size).astype(int), v.size - 1)]


@settings(max_examples=20, deadline=None)
@given(piecewise, piecewise, st.floats(0, 1), st.floats(0, 1))
def test_l1_contraction_and_maximum_principle(u0, v0, la, lb):
    dx = 1 / 64
    tu = solve_ibvp(_piecewise(u0), la, lb, TASEP, 0.5, dx)
    tv = solve_ibvp(_piecewise(v0), la, lb, TASEP, 0.5, dx)
    assert l1_distance(tu.final, tv.final, dx) <= l1_distance(tu.u[0], tv.u[0], dx) + 1e-12
    lo, hi = min(min(u0), la, lb), max(max(u0), la, lb)
    assert tu.u.min() >= lo - 1e-12 and tu.u.max() <= hi + 1e-12


# ------------------------------------------------------------------- slabs


OT2 = models.Overtaking.from_weights({(1, 0): [1.0, 0.5], (0, 1): [0.5], (0, -1): [0.5]}, d=2)


def test_slab_along_axis_equals_one_dimensional():
    h = lambda r: overtaking_flux(OT2, r)  # noqa: E731
    rho0 = lambda p: np.where(p[:, 0] < 0.5, 0.8, 0.1)  # noqa: E731
    sol = solve_slab(rho0, 0.8, 0.1, h, (1.0, 0.0), 0.0, 1.0, 0.5, 1 / 200)
    ref = solve_ibvp(step(0.8, 0.1), 0.8, 0.1, FluxTable.from_function(lambda r: h(r)[..., 0], 1.0), 0.5, 1 / 200)
    np.testing.assert_allclose(sol.trajectory.final, ref.final, atol=1e-13)
    pts = np.array([[0.3, 0.0], [0.3, 0.77]])
    a, b = sol.evaluate(0.5, pts)
    assert a == b


def test_slab_normal_orthogonal_to_drift_is_frozen():
    h = lambda r: overtaking_flux(OT2, r)  # noqa: E731
    rho0 = lambda p: np.where(p[:, 1] < 0.5, 0.8, 0.1)  # noqa: E731
    sol = solve_slab(rho0, 0.8, 0.1, h, (0.0, 1.0), 0.0, 1.0, 0.5, 1 / 100)
    np.testing.assert_array_equal(sol.trajectory.final, sol.trajectory.u[0])


def test_slab_diagonal_normal_uses_projected_flux():
    h = lambda r: overtaking_flux(OT2, r)  # noqa: E731
    n = np.array([1.0, 1.0]) / np.sqrt(2)
    rho0 = lambda p: np.full(p.shape[0], 0.3)  # noqa: E731
    sol = solve_slab(rho0, 0.6, 0.3, h, n, 0.0, 1.0, 0.2, 1 / 100)
    ref = solve_ibvp(0.3, 0.6, 0.3, FluxTable.from_function(lambda r: h(r) @ n, 1.0), 0.2, 1 / 100)
    np.testing.assert_allclose(sol.trajectory.final, ref.final, atol=1e-13)


def test_slab_rejects_non_planar_datum():
    h = lambda r: overtaking_flux(OT2, r)  # noqa: E731
    rho0 = lambda p: np.where(p[:, 1] < 0.5, 0.8, 0.1)  # noqa: E731
    with pytest.raises(ValueError):
        solve_slab(rho0, 0.8, 0.1, h, (1.0, 0.0), 0.0, 1.0, 0.5, 1 / 100)


# ------------------------------------------------------------------- audits


def test_audit_accepts_scheme_output():
    for left, right in ((0.9, 0.2), (0.2, 0.9)):
        tr = solve_ibvp(step(left, right), left, right, TASEP, 0.3, 1 / 200)
        assert entropy_audit(tr).passed


def test_audit_rejects_expansion_shock():
    # 0.9 | 0.2 moved at its jump speed is a weak solution but not an entropy one
    s = (TASEP(0.2) - TASEP(0.9)) / (0.2 - 0.9)
    u = lambda t, x: np.where(x < 0.5 + s * t, 0.9, 0.2)  # noqa: E731
    tr = Trajectory.from_function(u, 0.0, 1.0, 200, np.linspace(0, 0.3, 121), 0.9, 0.2, TASEP)
    rep = entropy_audit(tr)
    assert not rep.passed and rep.worst_scaled < -1


def test_stationary_audit_examples():
    ok = stationary_audit([0.0, 1.0], [0.5], 0.9, 0.1, TASEP)
    assert ok.passed
    wrong = stationary_audit([0.0, 1.0], [0.2], 0.9, 0.1, TASEP)
    assert not wrong.passed
    with pytest.raises(ValueError):
        stationary_audit([0.0, 1.0], [0.2, 0.3], 0.9, 0.1, TASEP)


def test_trajectory_csv_and_interpolation():
    tr = solve_ibvp(step(0.9, 0.2), 0.9, 0.2, TASEP, 0.2, 1 / 20)
    text = tr.to_csv([0.0, 0.2])
    assert text.splitlines()[0] == "t,x_center,u" and len(text.splitlines()) == 41
    mid = 0.5 * (tr.times[1] + tr.times[2])
    np.testing.assert_allclose(tr.at(mid), 0.5 * (tr.u[1] + tr.u[2]))
    with pytest.raises(ValueError):
        tr.at(1.0)
