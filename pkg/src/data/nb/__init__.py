"""Numba-compiled kernels for synthetic data generation."""
