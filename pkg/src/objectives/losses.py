"""Reconstruction, label-guided contrastive and feature-distillation losses.

All losses return 0-d tensors. Batched inputs carry a leading image axis and a
list of mask plans; every loss averages over images as well as patches.
"""
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from src.model.patcher import PlanOrPlans, plan_indices
from src.numeric import ops
from src.numeric.tensor import ShapeMismatchError, Tensor, as_tensor
from src.types import FloatArray, Label

TARGET_NORM_EPS = 1e-6


class LossError(ValueError):
    """Raised for empty masked sets, negative weights or targets that track gradients."""


class ClipBatchFeatures(NamedTuple):
    image_embeds: Tensor
    text_embeds: Tensor
    labels: Sequence[Label]
    tau: Union[Tensor, float]


class LossBreakdown(NamedTuple):
    mim: Tensor
    i2t: Tensor
    t2i: Tensor
    lg_clip: Tensor
    mfd: Tensor
    total: Tensor
    lambda_lg_clip: float
    lambda_mfd: float

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).item())
                for k in ("mim", "i2t", "t2i", "lg_clip", "mfd", "total")}


def _zero() -> Tensor:
    return Tensor(np.zeros(()))


# ---------------------------------------------------------------------------
# Masked image modelling
# ---------------------------------------------------------------------------

def normalize_patch_targets(target: FloatArray) -> FloatArray:
    """Zero mean, unit variance per patch row."""
    mu = target.mean(axis=-1, keepdims=True)
    var = target.var(axis=-1, keepdims=True)
    return (target - mu) / np.sqrt(var + TARGET_NORM_EPS)


def mim_loss(pred, target_patches, plan: PlanOrPlans, per_pixel: bool = True,
             norm_targets: bool = False) -> Tensor:
    """Mean over masked patches (and images) of the per-patch squared error.

    With ``per_pixel`` the squared L2 of each patch is divided by the patch
    width; otherwise the literal squared L2 is averaged.
    """
    pred = as_tensor(pred)
    target = np.asarray(getattr(target_patches, "data", target_patches))
    if pred.shape != target.shape:
        raise ShapeMismatchError("mim_loss", pred.shape, target.shape)
    _, masked = plan_indices(plan)
    if masked.shape[-1] == 0:
        raise LossError("mim_loss: masked set is empty")
    if norm_targets:
        target = normalize_patch_targets(target)
    diff = ops.sub(ops.gather(pred, masked), ops.gather(Tensor(target), masked))
    loss = ops.mean(ops.mul(diff, diff))
    return loss if per_pixel else ops.scale(loss, float(pred.shape[-1]))


# ---------------------------------------------------------------------------
# Label-guided contrastive
# ---------------------------------------------------------------------------

def _label_key(label: Label) -> tuple:
    if isinstance(label, (int, np.integer)):
        return ("class", int(label))
    return ("id", str(label))


def positive_mask(labels: Sequence[Label]) -> FloatArray:
    """``M[i, j] = 1`` when pairs i and j share a label (the diagonal is always 1)."""
    codes: dict = {}
    ids = np.array([codes.setdefault(_label_key(lbl), len(codes)) for lbl in labels])
    return (ids[:, None] == ids[None, :]).astype(np.float64)


def _check_features(f: ClipBatchFeatures) -> int:
    b = f.image_embeds.shape[0]
    if f.text_embeds.shape != f.image_embeds.shape:
        raise ShapeMismatchError("clip loss", f.image_embeds.shape, f.text_embeds.shape)
    if len(f.labels) != b:
        raise ShapeMismatchError("clip loss", f.image_embeds.shape, (len(f.labels),),
                                 "one label per pair")
    if b < 1:
        raise LossError("clip loss needs at least one pair")
    return b


def _logits(f: ClipBatchFeatures) -> Tensor:
    sim = ops.matmul(f.image_embeds, ops.transpose(f.text_embeds, (1, 0)))
    if isinstance(f.tau, Tensor):
        return ops.mul(sim, f.tau)
    return ops.scale(sim, float(f.tau))


def _anchor_loss(logits: Tensor, pos: FloatArray) -> Tensor:
    weights = pos / pos.sum(axis=1, keepdims=True)
    logp = ops.log_softmax(logits)
    return ops.scale(ops.sum_(ops.mul(logp, Tensor(weights))), -1.0 / logits.shape[0])


def image_to_text_loss(f: ClipBatchFeatures) -> Tensor:
    """Anchors are images; the softmax runs over the batch's texts."""
    _check_features(f)
    return _anchor_loss(_logits(f), positive_mask(f.labels))


def text_to_image_loss(f: ClipBatchFeatures) -> Tensor:
    """Anchors are texts; the softmax runs over the batch's images."""
    _check_features(f)
    return _anchor_loss(ops.transpose(_logits(f), (1, 0)), positive_mask(f.labels).T)


def clip_losses(f: ClipBatchFeatures) -> tuple[Tensor, Tensor, Tensor]:
    """``(i2t, t2i, ½·i2t + ½·t2i)`` sharing one similarity matrix."""
    _check_features(f)
    logits = _logits(f)
    pos = positive_mask(f.labels)
    i2t = _anchor_loss(logits, pos)
    t2i = _anchor_loss(ops.transpose(logits, (1, 0)), pos.T)
    return i2t, t2i, ops.add(ops.scale(i2t, 0.5), ops.scale(t2i, 0.5))


def label_guided_clip_loss(f: ClipBatchFeatures) -> Tensor:
    return clip_losses(f)[2]


# ---------------------------------------------------------------------------
# Feature distillation
# ---------------------------------------------------------------------------

def masked_feature_distillation_loss(pred, target, plan: Optional[PlanOrPlans] = None,
                                     masked_only: bool = False) -> Tensor:
    """Mean negative cosine between predicted and target patch features.

    Averages over every patch unless ``masked_only`` is set, in which case
    only the plan's masked positions count.
    """
    pred = as_tensor(pred)
    target = as_tensor(target)
    if target.requires_grad:
        raise LossError("masked_feature_distillation_loss: target must not track gradients")
    if pred.shape != target.shape:
        raise ShapeMismatchError("masked_feature_distillation_loss", pred.shape, target.shape)
    if masked_only:
        if plan is None:
            raise LossError("masked-only distillation needs a mask plan")
        _, masked = plan_indices(plan)
        pred = ops.gather(pred, masked)
        target = ops.gather(target, masked)
    cos = ops.sum_(ops.mul(ops.l2_normalize(pred), ops.l2_normalize(target)), axis=-1)
    return ops.scale(ops.mean(cos), -1.0)


# ---------------------------------------------------------------------------
# Combined objective
# ---------------------------------------------------------------------------

def total_loss(mim: Optional[Tensor], lg_clip: Optional[Tensor], mfd: Optional[Tensor],
               lambda_lg_clip: float, lambda_mfd: float,
               i2t: Optional[Tensor] = None, t2i: Optional[Tensor] = None) -> LossBreakdown:
    """``total = mim + λ_lg_clip·lg_clip + λ_mfd·mfd``.

    A term that is ``None`` or carries a zero weight is left out of ``total``
    entirely, so no gradient reaches the parameters behind it.
    """
    if lambda_lg_clip < 0 or lambda_mfd < 0:
        raise LossError(f"loss weights must be non-negative, got {lambda_lg_clip}, {lambda_mfd}")
    mim = mim if mim is not None else _zero()
    total = mim
    if lg_clip is not None and lambda_lg_clip > 0:
        total = ops.add(total, ops.scale(lg_clip, lambda_lg_clip))
    if mfd is not None and lambda_mfd > 0:
        total = ops.add(total, ops.scale(mfd, lambda_mfd))
    return LossBreakdown(
        mim=mim,
        i2t=i2t if i2t is not None else _zero(),
        t2i=t2i if t2i is not None else _zero(),
        lg_clip=lg_clip if lg_clip is not None else _zero(),
        mfd=mfd if mfd is not None else _zero(),
        total=total,
        lambda_lg_clip=lambda_lg_clip,
        lambda_mfd=lambda_mfd,
    )
