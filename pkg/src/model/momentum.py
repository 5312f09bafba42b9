"""EMA shadow of the image encoder and bridge, used as the distillation target network."""
from collections.abc import Mapping
from typing import Iterator, Optional

import numpy as np

from src.model.networks import bridge_features, encode_full
from src.model.params import BRIDGE, IMAGE_ENCODER, ModelParams
from src.numeric.tensor import Tensor

MOMENTUM_PREFIXES = (f"{IMAGE_ENCODER}.", f"{BRIDGE}.")


class MomentumError(RuntimeError):
    """Raised for uninitialised momentum parameters or key-set mismatches."""


class MomentumParams(Mapping):
    """Non-trainable copies of every ``image_encoder.*`` and ``bridge.*`` tensor."""

    def __init__(self, tensors: dict[str, Tensor], config, decay: float):
        self._tensors = dict(tensors)
        self.config = config
        self.decay = decay

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    @classmethod
    def from_online(cls, online: ModelParams, decay: float) -> "MomentumParams":
        tensors = {name: Tensor(online[name].data.copy(), name=name)
                   for name in online.names_with_prefix(*MOMENTUM_PREFIXES)}
        return cls(tensors, online.config, decay)

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], config,
                    decay: float) -> "MomentumParams":
        return cls({n: Tensor(np.array(a), name=n) for n, a in arrays.items()}, config, decay)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._tensors.items()}


def momentum_target(momentum: Optional[MomentumParams], image_patches) -> Tensor:
    """Shadow ``bridge(encoder(x))`` for full images; carries no gradient lineage."""
    if momentum is None or len(momentum) == 0:
        raise MomentumError("momentum parameters are not initialised")
    out = bridge_features(momentum, encode_full(momentum, image_patches))
    return Tensor(out.data)


def ema_update(
    momentum: MomentumParams, online: ModelParams, m: Optional[float] = None
) -> MomentumParams:
    """In place: θ̂ ← m·θ̂ + (1−m)·θ over the encoder and bridge keys."""
    m = momentum.decay if m is None else m
    online_keys = set(online.names_with_prefix(*MOMENTUM_PREFIXES))
    shadow_keys = set(momentum)
    if online_keys != shadow_keys:
        offending = sorted(online_keys ^ shadow_keys)[0]
        raise MomentumError(f"ema_update: key sets differ at {offending!r}")
    for name in momentum:
        shadow = momentum[name].data
        theta = online[name].data
        if shadow.shape != theta.shape:
            raise MomentumError(f"ema_update: shape mismatch for {name!r}: "
                                f"{shadow.shape} vs {theta.shape}")
        shadow *= m
        shadow += (1.0 - m) * theta
    return momentum
