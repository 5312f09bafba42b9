"""Numba-compiled rank statistics for evaluation metrics."""
