"""Moderately interacting particle systems, their mean-field PDEs and convergence diagnostics."""

__version__ = "0.1.0"
