"""MaskedCLIP desk configuration package."""
