"""Pre-training loop: masking, forward passes, the combined objective, AdamW and EMA.

Randomness per run::

    Rng.derive(seed, "init")          parameter initialisation
    Rng.derive(seed, "epoch", e)      batch composition of epoch e
    Rng.derive(seed, "mask", step)    mask plans of global step ``step``

so a resumed run sees exactly the batches and masks an uninterrupted run would.
"""
import time
from pathlib import Path
from typing import NamedTuple, Optional, Union

import numpy as np
import pandas as pd

from src.config.run_config import ModelConfig, TrainConfig
from src.data.bundle import DatasetBundle
from src.data.sampler import JointBatch, sample_epoch, steps_per_epoch
from src.enums import Variant
from src.logging_config import get_logger
from src.model.momentum import MomentumParams, ema_update, momentum_target
from src.model.networks import (
    decode_features,
    decode_pixels,
    encode_visible,
    image_embedding,
    text_embedding,
)
from src.model.params import LOG_TAU, ModelParams, init_params
from src.model.patcher import PatchGrid, patchify, sample_mask, select_visible
from src.model.tokenizer import Vocab
from src.numeric import ops
from src.numeric.rng import Rng
from src.numeric.tensor import Tensor
from src.objectives.losses import (
    ClipBatchFeatures,
    LossBreakdown,
    clip_losses,
    masked_feature_distillation_loss,
    mim_loss,
    total_loss,
)
from src.training.checkpoint import load_checkpoint, save_checkpoint
from src.training.optim import AdamState, adamw_step, clip_grad_norm, lr_at

logger = get_logger("training.trainer")

STEP_LOG_HEADER = "step,lr,mim,i2t,t2i,lg_clip,mfd,total"
LOSS_COLUMNS = ("mim", "i2t", "t2i", "lg_clip", "mfd", "total")
CHECKPOINT_NAME = "checkpoint.mclp"
STEP_LOG_NAME = "steps.csv"


class VariantPlan(NamedTuple):
    """Which terms a variant trains and whether CLIP pools through the bridge."""
    mim: bool
    clip: bool
    mfd: bool
    bridge: bool


VARIANT_PLANS: dict[Variant, VariantPlan] = {
    Variant.MASKEDCLIP: VariantPlan(mim=True, clip=True, mfd=True, bridge=True),
    Variant.MAE_CLIP_SHARED: VariantPlan(mim=True, clip=True, mfd=False, bridge=False),
    Variant.MAE_CLIP_BRIDGE: VariantPlan(mim=True, clip=True, mfd=False, bridge=True),
    Variant.MAE_ONLY: VariantPlan(mim=True, clip=False, mfd=False, bridge=False),
    Variant.CLIP_ONLY: VariantPlan(mim=False, clip=True, mfd=False, bridge=False),
}


class StepRecord(NamedTuple):
    step: int
    epoch: int
    lr: float
    losses: dict[str, float]
    wall_time: float

    def csv_row(self) -> str:
        """One log line; ``repr`` keeps every float bit-exact on re-read."""
        values = [repr(float(self.lr))] + [repr(float(self.losses[k])) for k in LOSS_COLUMNS]
        return ",".join([str(self.step)] + values)


class TrainState:
    """Everything a step mutates: online and momentum params, moments, counters."""

    def __init__(self, params: ModelParams, momentum: MomentumParams, adam: AdamState,
                 config: TrainConfig, step: int = 0, total_steps: int = 1):
        self.params = params
        self.momentum = momentum
        self.adam = adam
        self.config = config
        self.step = step
        self.total_steps = total_steps

    @property
    def plan(self) -> VariantPlan:
        return VARIANT_PLANS[Variant(self.config.variant)]

    @property
    def model_config(self) -> ModelConfig:
        return self.params.config

    def __repr__(self) -> str:
        return (f"TrainState(step={self.step}/{self.total_steps}, "
                f"variant={Variant(self.config.variant).value})")


class TrainResult(NamedTuple):
    state: TrainState
    checkpoint_path: Path
    log_path: Path
    records: list[StepRecord]


# ---------------------------------------------------------------------------
# Setup
# ---------------------------------------------------------------------------

def bundle_geometry(bundle: DatasetBundle) -> dict[str, int]:
    g = bundle.grid
    return {"image_height": g.height, "image_width": g.width,
            "channels": g.channels, "patch_size": g.patch}


def fit_to_bundle(preset: ModelConfig, bundle: DatasetBundle) -> ModelConfig:
    """Take widths and depths from ``preset``, geometry from the bundle."""
    return ModelConfig(**{**preset.model_dump(), **bundle_geometry(bundle)})


def resolve_model_config(bundle: DatasetBundle,
                         model_config: Optional[ModelConfig] = None) -> ModelConfig:
    """Fit a model config to the bundle's geometry and vocabulary.

    Without an explicit config the desk defaults are used with the bundle's
    image geometry. An explicit config must already agree on geometry.
    """
    if model_config is None:
        model_config = fit_to_bundle(ModelConfig.desk(), bundle)
    for field, value in bundle_geometry(bundle).items():
        if getattr(model_config, field) != value:
            raise ValueError(f"model config {field}={getattr(model_config, field)} "
                             f"does not match the bundle ({value})")
    return ModelConfig(**{**model_config.model_dump(), "vocab_size": bundle.vocab.size})


def check_variant_fits(config: TrainConfig, model_config: ModelConfig) -> None:
    plan = VARIANT_PLANS[Variant(config.variant)]
    if plan.clip and not plan.bridge:
        enc, brg = model_config.image_encoder.width, model_config.bridge.width
        if enc != brg:
            raise ValueError(f"variant {Variant(config.variant).value} pools encoder tokens "
                             f"into the bridge-width projection; widths {enc} and {brg} differ")


def init_train_state(config: TrainConfig, model_config: ModelConfig,
                     total_steps: int) -> TrainState:
    check_variant_fits(config, model_config)
    params = init_params(model_config, Rng.derive(config.seed, "init"))
    momentum = MomentumParams.from_online(params, config.ema_decay)
    return TrainState(params, momentum, AdamState.zeros_like(params), config,
                      step=0, total_steps=total_steps)


# ---------------------------------------------------------------------------
# One step
# ---------------------------------------------------------------------------

def compute_losses(state: TrainState, batch: JointBatch, rng: Rng) -> LossBreakdown:
    """Forward pass of every term the variant enables, combined into ``total``."""
    params, cfg, plan = state.params, state.config, state.plan
    grid = PatchGrid.from_model_config(params.config)

    mim = mfd = i2t = t2i = lg_clip = None
    if plan.mim or plan.mfd:
        images = np.concatenate([batch.paired_images, batch.unpaired_images], axis=0)
        patches = patchify(Tensor(images), grid)
        plans = [sample_mask(grid.num_patches, cfg.mask_ratio, rng) for _ in range(len(images))]
        latents = encode_visible(params, select_visible(patches, plans), plans)
        if plan.mim:
            pred = decode_pixels(params, latents, plans, grid)
            mim = mim_loss(pred, patches, plans, per_pixel=cfg.per_pixel_mse,
                           norm_targets=cfg.norm_pixel_targets)
        if plan.mfd:
            target = momentum_target(state.momentum, patches)
            mfd = masked_feature_distillation_loss(decode_features(params, latents, plans),
                                                   target, plans, cfg.distill_masked_only)

    if plan.clip:
        paired = patchify(Tensor(batch.paired_images), grid)
        features = ClipBatchFeatures(
            image_embeds=image_embedding(params, paired, use_bridge=plan.bridge),
            text_embeds=text_embedding(params, batch.token_ids),
            labels=batch.labels,
            tau=ops.exp(params[LOG_TAU]),
        )
        i2t, t2i, lg_clip = clip_losses(features)

    return total_loss(mim, lg_clip, mfd,
                      cfg.lambda_lg_clip if plan.clip else 0.0,
                      cfg.lambda_mfd if plan.mfd else 0.0,
                      i2t=i2t, t2i=t2i)


def train_step(state: TrainState, batch: JointBatch, rng: Optional[Rng] = None,
               epoch: int = 0) -> StepRecord:
    """Forward, backward, AdamW, τ clamp, then EMA of the updated online weights."""
    started = time.perf_counter()
    cfg = state.config
    rng = rng if rng is not None else Rng.derive(cfg.seed, "mask", state.step)

    state.params.zero_grad()
    breakdown = compute_losses(state, batch, rng)
    if breakdown.total.requires_grad:
        breakdown.total.backward()

    grads = {name: t.grad for name, t in state.params.items()}
    if cfg.max_grad_norm is not None:
        grads, _ = clip_grad_norm(grads, cfg.max_grad_norm)
    lr = lr_at(cfg, state.step, state.total_steps)
    adamw_step(state.params, grads, state.adam, lr, (cfg.beta1, cfg.beta2),
               cfg.weight_decay, cfg.adam_eps)
    state.params.clamp_tau()
    ema_update(state.momentum, state.params)

    record = StepRecord(step=state.step, epoch=epoch, lr=lr, losses=breakdown.as_floats(),
                        wall_time=time.perf_counter() - started)
    state.step += 1
    return record


# ---------------------------------------------------------------------------
# Step log
# ---------------------------------------------------------------------------

def _prepare_log(path: Path, keep_before: int) -> None:
    """Start a fresh log, or keep only rows older than ``keep_before`` on resume."""
    rows: list[str] = []
    if keep_before > 0 and path.exists():
        lines = path.read_text(encoding="utf-8").splitlines()
        rows = [ln for ln in lines[1:] if ln and int(ln.split(",", 1)[0]) < keep_before]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join([STEP_LOG_HEADER] + rows) + "\n", encoding="utf-8")


def read_step_log(path: Union[str, Path]) -> pd.DataFrame:
    """Parse a step log back into a DataFrame (``round_trip`` keeps floats exact)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Step log not found: {path}")
    return pd.read_csv(path, float_precision="round_trip")


# ---------------------------------------------------------------------------
# Loop
# ---------------------------------------------------------------------------

def train_loop(config: TrainConfig, bundle: DatasetBundle, out_dir: Union[str, Path],
               model_config: Optional[ModelConfig] = None,
               resume_from: Optional[Union[str, Path]] = None) -> TrainResult:
    """Run ``config.epochs`` epochs, checkpointing every ``checkpoint_every`` epochs.

    Writes ``checkpoint.mclp`` and ``steps.csv`` under ``out_dir``. With
    ``resume_from`` the state is restored and the run continues at the exact
    step where the checkpoint was taken.
    """
    out_dir = Path(out_dir)
    mcfg = resolve_model_config(bundle, model_config)
    per_epoch = steps_per_epoch(bundle.n_paired, bundle.n_unpaired,
                                config.batch_paired, config.batch_unpaired)
    total_steps = per_epoch * config.epochs
    variant = Variant(config.variant).value

    if resume_from is not None:
        state = load_checkpoint(resume_from, model_config=mcfg, train_config=config)
        if state.total_steps != total_steps:
            raise ValueError(f"checkpoint {resume_from} was taken for {state.total_steps} "
                             f"steps; this bundle and config give {total_steps}")
    else:
        state = init_train_state(config, mcfg, total_steps)

    vocab = Vocab(tokens=bundle.vocab.tokens, max_len=mcfg.max_text_len)
    checkpoint_path = out_dir / CHECKPOINT_NAME
    log_path = out_dir / STEP_LOG_NAME
    try:
        _prepare_log(log_path, state.step)
    except OSError as e:
        raise OSError(f"cannot write step log {log_path}: {e}") from e

    logger.info("Training %s for %d steps (%d per epoch), %d parameters",
                variant, total_steps, per_epoch, state.params.parameter_count(),
                extra={"variant": variant, "path": str(out_dir)})

    records: list[StepRecord] = []
    first_epoch, offset = divmod(state.step, per_epoch)
    with open(log_path, "a", encoding="utf-8") as log:
        for epoch in range(first_epoch, config.epochs):
            batches = sample_epoch(bundle, config.batch_paired, config.batch_unpaired,
                                   Rng.derive(config.seed, "epoch", epoch), vocab=vocab)
            start = offset if epoch == first_epoch else 0
            for batch in batches[start:]:
                record = train_step(state, batch, epoch=epoch)
                records.append(record)
                log.write(record.csv_row() + "\n")
                if record.step % config.log_every == 0:
                    logger.info("step %d lr %.3e total %.5f", record.step, record.lr,
                                record.losses["total"],
                                extra={"step": record.step, "epoch": epoch, "variant": variant})
            log.flush()
            if (epoch + 1) % config.checkpoint_every == 0 or epoch + 1 == config.epochs:
                save_checkpoint(state, checkpoint_path)

    return TrainResult(state, checkpoint_path, log_path, records)
