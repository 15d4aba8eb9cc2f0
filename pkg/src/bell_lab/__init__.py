"""Simulation and analysis toolkit for Bell-CHSH experiments and hidden-variable models."""

__version__ = "0.1.0"
