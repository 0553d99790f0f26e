"""Neumann Laplacian spectra, heat kernels and perturbation checks on irregular domains."""

__version__ = "0.1.0"
