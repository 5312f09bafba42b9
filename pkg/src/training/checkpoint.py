"""Trainer checkpoints on top of the MCLP archive.

Entries are grouped by prefix: ``params/``, ``momentum/``, ``adam_m/`` and
``adam_v/``. The metadata block echoes both configs and the step counters, so
a checkpoint alone is enough to rebuild a :class:`TrainState`.
"""
from pathlib import Path
from typing import Any, Optional, Union

from src.config.run_config import ModelConfig, TrainConfig
from src.logging_config import get_logger
from src.model.archive import read_archive, write_archive
from src.model.momentum import MomentumParams
from src.model.params import ModelParams
from src.training.optim import AdamState
from src.types import FloatArray

logger = get_logger("training.checkpoint")

CHECKPOINT_KIND = "maskedclip-trainer"
_PARAMS, _MOMENTUM, _ADAM_M, _ADAM_V = "params/", "momentum/", "adam_m/", "adam_v/"


class CheckpointError(ValueError):
    """Raised when a checkpoint is incomplete or disagrees with the requested config."""


def _first_difference(expected: Any, found: Any, path: str = "") -> Optional[str]:
    if isinstance(expected, dict) and isinstance(found, dict):
        for key in sorted(set(expected) | set(found)):
            sub = f"{path}.{key}" if path else str(key)
            if key not in expected or key not in found:
                return sub
            diff = _first_difference(expected[key], found[key], sub)
            if diff is not None:
                return diff
        return None
    return None if expected == found else (path or "<root>")


def _strip(entries: dict[str, FloatArray], prefix: str) -> dict[str, FloatArray]:
    return {name[len(prefix):]: arr for name, arr in entries.items() if name.startswith(prefix)}


def checkpoint_entries(params: ModelParams, momentum: MomentumParams,
                       adam: AdamState) -> dict[str, FloatArray]:
    entries: dict[str, FloatArray] = {}
    entries.update({_PARAMS + n: a for n, a in params.arrays().items()})
    entries.update({_MOMENTUM + n: a for n, a in momentum.arrays().items()})
    entries.update({_ADAM_M + n: adam.m[n] for n in params})
    entries.update({_ADAM_V + n: adam.v[n] for n in params})
    return entries


def save_checkpoint(state, path: Union[str, Path]) -> Path:
    """Write ``state`` (a :class:`~src.training.trainer.TrainState`) to ``path``."""
    metadata = {
        "kind": CHECKPOINT_KIND,
        "step": state.step,
        "adam_step": state.adam.step,
        "total_steps": state.total_steps,
        "model_config": state.params.config.model_dump(mode="json"),
        "train_config": state.config.model_dump(mode="json"),
    }
    entries = checkpoint_entries(state.params, state.momentum, state.adam)
    try:
        out = write_archive(path, metadata, entries)
    except OSError as e:
        raise OSError(f"cannot write checkpoint {path}: {e}") from e
    logger.info("Saved checkpoint at step %d", state.step,
                extra={"path": str(out), "step": state.step})
    return out


def _check_config(kind: str, expected: Optional[dict], found: dict, source: str) -> None:
    if expected is None:
        return
    field = _first_difference(expected, found)
    if field is not None:
        raise CheckpointError(f"{source}: {kind} field {field!r} differs from the checkpoint")


def load_checkpoint(path: Union[str, Path], model_config: Optional[ModelConfig] = None,
                    train_config: Optional[TrainConfig] = None):
    """Rebuild a ``TrainState``; optional configs must match the stored echo exactly."""
    from src.training.trainer import TrainState

    metadata, entries = read_archive(path)
    source = str(path)
    if metadata.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{source}: not a trainer checkpoint (kind={metadata.get('kind')!r})")
    _check_config("model config",
                  model_config.model_dump(mode="json") if model_config else None,
                  metadata["model_config"], source)
    _check_config("train config",
                  train_config.model_dump(mode="json") if train_config else None,
                  metadata["train_config"], source)

    mcfg = ModelConfig(**metadata["model_config"])
    tcfg = TrainConfig(**metadata["train_config"])
    params = ModelParams.from_arrays(_strip(entries, _PARAMS), mcfg)
    momentum = MomentumParams.from_arrays(_strip(entries, _MOMENTUM), mcfg, tcfg.ema_decay)
    m, v = _strip(entries, _ADAM_M), _strip(entries, _ADAM_V)
    if set(m) != set(params) or set(v) != set(params):
        raise CheckpointError(f"{source}: optimizer moments do not cover every parameter")
    adam = AdamState({n: m[n].copy() for n in params}, {n: v[n].copy() for n in params},
                     step=int(metadata["adam_step"]))
    logger.info("Loaded checkpoint at step %d", metadata["step"], extra={"path": source})
    return TrainState(params=params, momentum=momentum, adam=adam, config=tcfg,
                      step=int(metadata["step"]), total_steps=int(metadata["total_steps"]))


def load_model_params(path: Union[str, Path]) -> ModelParams:
    """Online parameters only, for evaluation and reconstruction."""
    metadata, entries = read_archive(path)
    if metadata.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path}: not a trainer checkpoint")
    return ModelParams.from_arrays(_strip(entries, _PARAMS),
                                   ModelConfig(**metadata["model_config"]),
                                   requires_grad=False)
