"""Continuous-time simulation of open lattice gases."""

from .engine import (
    CoupledState,
    DensityProfile,
    Engine,
    OrderViolation,
    RandomStream,
    RateOverflow,
    SimState,
    StationaryEstimate,
    cell_values,
    empirical_density,
    get_engine,
    init_coupled,
    init_from_profile,
    kruzkov_monitor,
    local_equilibrium_probe,
    order_sign_for,
    product_expectation,
    profiles_at,
    region_density,
    run,
    run_coupled,
    stationary_profile,
)

__all__ = [
    "CoupledState",
    "DensityProfile",
    "Engine",
    "OrderViolation",
    "RandomStream",
    "RateOverflow",
    "SimState",
    "StationaryEstimate",
    "cell_values",
    "empirical_density",
    "get_engine",
    "init_coupled",
    "init_from_profile",
    "kruzkov_monitor",
    "local_equilibrium_probe",
    "order_sign_for",
    "product_expectation",
    "profiles_at",
    "region_density",
    "run",
    "run_coupled",
    "stationary_profile",
]
