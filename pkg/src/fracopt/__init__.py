"""Fractional-diffusion semilinear PDE solvers and box-constrained optimal control."""

__version__ = "0.1.0"
