"""Dense tensors, reverse-mode differentiation, a gradient checker and a seeded RNG."""
from src.numeric.gradcheck import GradCheckReport, grad_check
from src.numeric.rng import Rng, rng_next_uniform, rng_shuffle
from src.numeric.tensor import (
    NonFiniteError,
    NumericError,
    ShapeMismatchError,
    Tensor,
    as_tensor,
    float64_mode,
    get_default_dtype,
    set_default_dtype,
)

__all__ = [
    "GradCheckReport",
    "NonFiniteError",
    "NumericError",
    "Rng",
    "ShapeMismatchError",
    "Tensor",
    "as_tensor",
    "float64_mode",
    "get_default_dtype",
    "grad_check",
    "rng_next_uniform",
    "rng_shuffle",
    "set_default_dtype",
]
