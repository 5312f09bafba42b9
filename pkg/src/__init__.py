"""MaskedCLIP desk: semi-supervised vision-language pre-training on a numpy autodiff core."""
__version__ = "0.1.0"
