"""Data-driven multiscale design toolkit: lattice library, homogenization,
mixed-variable GP surrogate, and eigenfrequency topology optimization."""

__version__ = "0.1.0"
