"""Shared type definitions for MaskedCLIP desk."""
from typing import Union

import numpy as np
import numpy.typing as npt


# Type aliases
FloatArray = npt.NDArray[np.floating]
BoolArray = npt.NDArray[np.bool_]
IntArray = npt.NDArray[np.int64]

# A paired label is a class id or a unique identifier tag.
Label = Union[int, str]
