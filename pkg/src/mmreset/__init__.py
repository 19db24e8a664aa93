"""Simulation and analysis toolkit for flux-modulated qubit reset into a
metamaterial waveguide."""

__version__ = "0.1.0"
