"""Meshfree deep collocation for elasticity, hyperelasticity and J2 plasticity."""

__version__ = "0.1.0"
