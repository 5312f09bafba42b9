"""Central-difference gradient verification for scalar functions of named tensors."""
from typing import Callable, Mapping, NamedTuple, Optional

import numpy as np

from src.logging_config import get_logger
from src.numeric.rng import Rng
from src.numeric.tensor import NumericError, Tensor, float64_mode
from src.types import FloatArray

logger = get_logger("gradcheck")

DEFAULT_STEP = 1e-5
DEFAULT_COORDS = 64


class GradCheckReport(NamedTuple):
    per_param: dict[str, float]
    max_rel_error: float
    step: float

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error <= tolerance


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def grad_check(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, object],
    h: float = DEFAULT_STEP,
    rng: Optional[Rng] = None,
    n_coords: int = DEFAULT_COORDS,
    tamper: Optional[Callable[[str, FloatArray], FloatArray]] = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    Args:
        f: Maps a dict of named tensors to a single-element tensor. It is
            called inside ``float64_mode`` so any tensors it creates are 64-bit.
        params: Initial values (arrays or tensors) keyed by parameter name.
        h: Perturbation step.
        rng: Chooses the coordinate subsample; ``Rng(0)`` when omitted.
        n_coords: Coordinates per parameter; all of them when the parameter
            is smaller.
        tamper: Applied to each analytic gradient before comparison. Used to
            confirm that a corrupted gradient is caught.

    Returns:
        GradCheckReport with the worst relative error per parameter.
    """
    rng = rng if rng is not None else Rng(0)
    with float64_mode():
        leaves = {
            name: Tensor(np.array(np.asarray(getattr(v, "data", v)), dtype=np.float64),
                         requires_grad=True, name=name)
            for name, v in params.items()
        }
        out = f(leaves)
        if out.size != 1:
            raise NumericError(f"grad_check needs a scalar function, got shape {out.shape}")
        if out.requires_grad:
            out.backward()

        # Constant views that share storage with the leaves.
        probes = {name: Tensor(leaf.data) for name, leaf in leaves.items()}

        per_param: dict[str, float] = {}
        for name, leaf in leaves.items():
            analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
            if tamper is not None:
                analytic = tamper(name, analytic)
            flat_grad = np.asarray(analytic).reshape(-1)
            flat = leaf.data.reshape(-1)
            if flat.size <= n_coords:
                coords = np.arange(flat.size)
            else:
                coords = np.sort(rng.permutation(flat.size)[:n_coords])

            worst = 0.0
            for c in coords:
                original = flat[c]
                flat[c] = original + h
                f_plus = f(probes).item()
                flat[c] = original - h
                f_minus = f(probes).item()
                flat[c] = original
                numeric = (f_plus - f_minus) / (2.0 * h)
                worst = max(worst, relative_error(float(flat_grad[c]), numeric))
            per_param[name] = worst

    max_err = max(per_param.values(), default=0.0)
    logger.debug("grad_check over %d parameters: max rel err %.3e", len(per_param), max_err)
    return GradCheckReport(per_param=per_param, max_rel_error=max_err, step=h)
