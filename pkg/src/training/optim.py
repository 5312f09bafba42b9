"""AdamW with decoupled weight decay and a linear-warmup / half-cosine schedule."""
import math
from collections.abc import Mapping
from typing import Callable, NamedTuple, Optional

import numpy as np

from src.model.params import is_decay_exempt
from src.numeric.tensor import Tensor
from src.types import FloatArray


class OptimizerError(ValueError):
    """Raised for key mismatches and non-finite gradients."""


class Schedule(NamedTuple):
    """Anything with these three attributes can drive :func:`lr_at`."""
    base_lr: float
    warmup_epochs: float
    epochs: int


def lr_at(config, step: int, total_steps: int) -> float:
    """Linear warmup from 0 to ``base_lr``, then half-cosine decay to 0 at ``total_steps``.

    The warmup spans ``total_steps · warmup_epochs / epochs`` steps.
    """
    base = config.base_lr
    warmup = total_steps * config.warmup_epochs / config.epochs
    if step < warmup:
        return base * step / warmup
    span = total_steps - warmup
    if span <= 0:
        return base
    progress = min((step - warmup) / span, 1.0)
    return base * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamState:
    """First/second moments per parameter plus the shared step counter."""

    def __init__(self, m: dict[str, FloatArray], v: dict[str, FloatArray], step: int = 0):
        self.m = m
        self.v = v
        self.step = step

    @classmethod
    def zeros_like(cls, params: Mapping[str, Tensor]) -> "AdamState":
        return cls({n: np.zeros_like(p.data) for n, p in params.items()},
                   {n: np.zeros_like(p.data) for n, p in params.items()})


def global_grad_norm(grads: Mapping[str, Optional[FloatArray]]) -> float:
    total = 0.0
    for g in grads.values():
        if g is not None:
            total += float(np.sum(np.square(g, dtype=np.float64)))
    return math.sqrt(total)


def clip_grad_norm(grads: Mapping[str, Optional[FloatArray]],
                   max_norm: float) -> tuple[dict[str, Optional[FloatArray]], float]:
    """Scale all gradients by ``max_norm / norm`` when the global norm exceeds it."""
    norm = global_grad_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return dict(grads), norm
    factor = max_norm / norm
    return {n: (g * factor if g is not None else None) for n, g in grads.items()}, norm


def adamw_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Optional[FloatArray]],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.95),
    weight_decay: float = 0.0,
    eps: float = 1e-8,
    decay_exempt: Callable[[str], bool] = is_decay_exempt,
) -> None:
    """One bias-corrected AdamW update, in place on ``params`` and ``state``.

    Parameters whose gradient is ``None`` are skipped entirely (no moment
    update, no decay). Decay multiplies θ by ``1 − lr·weight_decay`` before the
    Adam step, except for names accepted by ``decay_exempt``.
    """
    if set(state.m) != set(params) or set(state.v) != set(params):
        missing = sorted(set(params) ^ set(state.m))
        raise OptimizerError(f"moment keys differ from parameters at {missing[:1]}")
    unknown = sorted(set(grads) - set(params))
    if unknown:
        raise OptimizerError(f"gradient for unknown parameter {unknown[0]!r}")
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient for parameter {name!r}")

    b1, b2 = betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if weight_decay and not decay_exempt(name):
            p.data *= 1.0 - lr * weight_decay
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
