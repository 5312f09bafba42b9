"""Numba-compiled kernels for the numeric core."""
