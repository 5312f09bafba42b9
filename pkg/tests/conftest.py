"""Shared pytest fixtures for MaskedCLIP desk tests.

All fixtures are deterministic and small enough that a full training step on
them runs in well under a second.
"""
import sys
from pathlib import Path

import numpy as np
import pytest

# Ensure src is importable
_project_root = str(Path(__file__).resolve().parent.parent)
if _project_root not in sys.path:
    sys.path.insert(0, _project_root)

from src.config.run_config import ModelConfig, TrainConfig
from src.data.synth import synth_generate
from src.model.params import init_params
from src.model.patcher import PatchGrid
from src.numeric.rng import Rng


# ---------------------------------------------------------------------------
# Geometry and configs
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def tiny_config() -> ModelConfig:
    """8×8×3 images, P=4 (N=4), width-8 single-block stacks, vocab of 12."""
    return ModelConfig.tiny()


@pytest.fixture(scope="session")
def tiny_grid(tiny_config: ModelConfig) -> PatchGrid:
    return PatchGrid.from_model_config(tiny_config)


@pytest.fixture()
def tiny_params(tiny_config: ModelConfig):
    """Fresh seeded parameters (function scope: tests mutate them)."""
    return init_params(tiny_config, Rng.derive(0, "init"))


@pytest.fixture(scope="session")
def tiny_train_config() -> TrainConfig:
    """Two epochs of 4+4 batches; checkpoints every epoch."""
    return TrainConfig(epochs=2, warmup_epochs=1, batch_paired=4, batch_unpaired=4,
                       base_lr=1e-3, seed=0, checkpoint_every=1, log_every=1)


# ---------------------------------------------------------------------------
# Bundles
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def tiny_bundle(tiny_grid: PatchGrid):
    """8 paired + 8 unpaired 8×8 images over 2 classes."""
    return synth_generate(8, 8, 2, tiny_grid, seed=3, max_text_len=6)


@pytest.fixture(scope="session")
def probe_bundle(tiny_grid: PatchGrid):
    """40 paired items over 2 classes for evaluation tests."""
    return synth_generate(40, 0, 2, tiny_grid, seed=11, max_text_len=6)


@pytest.fixture(scope="session")
def mixed_label_bundle(tiny_grid: PatchGrid):
    """Half the pairs carry unique identifier labels."""
    return synth_generate(12, 4, 3, tiny_grid, seed=5, identifier_fraction=0.5, max_text_len=6)


# ---------------------------------------------------------------------------
# Arrays
# ---------------------------------------------------------------------------

@pytest.fixture()
def unit_rows():
    """Factory for row-normalised random matrices."""
    def make(n: int, d: int, seed: int = 0) -> np.ndarray:
        x = Rng(seed).normal_array((n, d))
        return x / np.linalg.norm(x, axis=1, keepdims=True)
    return make
