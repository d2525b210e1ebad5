"""Simulation and continuum modelling of a two-species exclusion process on a periodic lattice."""

__version__ = "0.1.0"
