"""Gradient and oracle verification suites."""
from src.verification.suite import (  # noqa: F401
    CheckRow,
    format_report,
    run_gradcheck,
    run_losscheck,
)
