#!/usr/bin/env python3
"""Standalone entry point for the MaskedCLIP desk command line."""
import sys
from pathlib import Path

# Add project root to path
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
