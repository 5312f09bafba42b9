"""MaskedCLIP pre-training.

Package structure:
    optim.py       - AdamW and the warmup/cosine learning-rate schedule
    trainer.py     - TrainState, train_step, train_loop, step log
    checkpoint.py  - trainer checkpoints on the MCLP archive
"""
from src.training.checkpoint import CheckpointError, load_checkpoint, save_checkpoint  # noqa: F401
from src.training.optim import AdamState, OptimizerError, adamw_step, lr_at  # noqa: F401
from src.training.trainer import (  # noqa: F401
    StepRecord,
    TrainResult,
    TrainState,
    read_step_log,
    train_loop,
    train_step,
)
