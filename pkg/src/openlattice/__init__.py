"""Hydrodynamics and hydrostatics of open attractive lattice gases."""

__version__ = "0.1.0"
