"""Forward passes of the image encoder, pixel decoder, bridge, feature decoder and text encoder.

All functions accept a single item or a batch with one leading axis and
return the same rank they were given. ``params`` is any mapping of names to
tensors that carries a ``config`` attribute (``ModelParams`` or
``MomentumParams``).
"""
from typing import Optional, Sequence, Union

import numpy as np

from src.model.params import (
    BRIDGE,
    FEATURE_DECODER,
    IMAGE_ENCODER,
    IMAGE_PROJ,
    MASK_TOKEN_FEATURE,
    MASK_TOKEN_PIXEL,
    PIXEL_DECODER,
    TEXT_ENCODER,
    TEXT_PROJ,
)
from src.model.patcher import (
    MaskPlan,
    PatchGrid,
    PlanOrPlans,
    assemble_with_mask_tokens,
    plan_indices,
    positional_embeddings,
)
from src.model.tokenizer import PAD_ID
from src.model.transformer import dense, run_stack
from src.numeric import ops
from src.numeric.tensor import ShapeMismatchError, Tensor, as_tensor
from src.types import IntArray


class TextEncodingError(ValueError):
    """Raised when a caption has no real tokens to pool."""


def _as_batch(x) -> tuple[Tensor, bool]:
    t = as_tensor(x)
    if t.ndim == 2:
        return ops.reshape(t, (1,) + t.shape), True
    if t.ndim != 3:
        raise ShapeMismatchError("network input", t.shape, (),
                                 "expected (tokens, width) or (batch, tokens, width)")
    return t, False


def _unbatch(t: Tensor, single: bool) -> Tensor:
    return ops.reshape(t, t.shape[1:]) if single else t


def _grid(params) -> PatchGrid:
    return PatchGrid.from_model_config(params.config)


def _pos_table(params, width: int) -> np.ndarray:
    grid = _grid(params)
    return positional_embeddings(grid.num_patches, width, (grid.rows, grid.cols))


def _visible_indices(visible: Union[IntArray, PlanOrPlans]) -> IntArray:
    if isinstance(visible, MaskPlan):
        return visible.visible_idx
    if isinstance(visible, (list, tuple)) and visible and isinstance(visible[0], MaskPlan):
        return plan_indices(visible)[0]
    return np.asarray(visible, dtype=np.int64)


def _plan_size(plan: PlanOrPlans) -> int:
    return plan.num_patches if isinstance(plan, MaskPlan) else plan[0].num_patches


# ---------------------------------------------------------------------------
# Image encoder
# ---------------------------------------------------------------------------

def encode_visible(params, patches_visible, visible: Union[IntArray, PlanOrPlans]) -> Tensor:
    """Patch-embed the visible patches, add their positions, run the encoder stack.

    Args:
        params: Parameter mapping.
        patches_visible: ``(k, D_px)`` or ``(B, k, D_px)`` pixel rows.
        visible: Positions of those rows, given as indices or as mask plan(s).

    Returns:
        Encoder tokens after the final layer norm, ``(k, d)`` or ``(B, k, d)``.
    """
    cfg = params.config
    x, single = _as_batch(patches_visible)
    idx = _visible_indices(visible)
    if x.shape[-1] != cfg.patch_dim:
        raise ShapeMismatchError("encode_visible", x.shape, (cfg.patch_dim,), "patch width")
    if x.shape[-2] < 1 or idx.shape[-1] != x.shape[-2]:
        raise ShapeMismatchError("encode_visible", x.shape, idx.shape, "rows vs visible indices")
    pos = _pos_table(params, cfg.image_encoder.width)[idx]
    h = ops.add(dense(params, f"{IMAGE_ENCODER}.patch_embed", x), Tensor(pos))
    h = run_stack(params, IMAGE_ENCODER, h, cfg.image_encoder)
    return _unbatch(h, single)


def encode_full(params, patches) -> Tensor:
    """Encoder over every patch of the image."""
    n = params.config.num_patches
    t = as_tensor(patches)
    if t.ndim < 2 or t.shape[-2] != n:
        raise ShapeMismatchError("encode_full", t.shape, (n, params.config.patch_dim))
    return encode_visible(params, t, np.arange(n, dtype=np.int64))


# ---------------------------------------------------------------------------
# Decoders and bridge
# ---------------------------------------------------------------------------

def _decode(params, latents_visible, plan: PlanOrPlans, prefix: str, token_name: str,
            head: str) -> Tensor:
    cfg = params.config
    stack_cfg = getattr(cfg, prefix)
    x, single = _as_batch(latents_visible)
    if _plan_size(plan) != cfg.num_patches:
        raise ShapeMismatchError(prefix, (_plan_size(plan),), (cfg.num_patches,),
                                 "plan does not cover the patch grid")
    h = dense(params, f"{prefix}.embed", x)
    h = assemble_with_mask_tokens(h, params[token_name], plan,
                                  _pos_table(params, stack_cfg.width))
    h = run_stack(params, prefix, h, stack_cfg)
    return _unbatch(dense(params, f"{prefix}.{head}", h), single)


def decode_pixels(params, latents_visible, plan: PlanOrPlans,
                  grid: Optional[PatchGrid] = None) -> Tensor:
    """Pixel predictions for all N positions from visible latents and T_I."""
    if grid is not None and grid.num_patches != _plan_size(plan):
        raise ShapeMismatchError("decode_pixels", (_plan_size(plan),), (grid.num_patches,),
                                 "plan and grid disagree on patch count")
    return _decode(params, latents_visible, plan, PIXEL_DECODER, MASK_TOKEN_PIXEL, "head")


def decode_features(params, latents_visible, plan: PlanOrPlans) -> Tensor:
    """Bridge-space feature predictions for all N positions from visible latents and T_F."""
    return _decode(params, latents_visible, plan, FEATURE_DECODER, MASK_TOKEN_FEATURE, "head")


def bridge_features(params, encoder_seq) -> Tensor:
    cfg = params.config
    x, single = _as_batch(encoder_seq)
    if x.shape[-1] != cfg.image_encoder.width:
        raise ShapeMismatchError("bridge_features", x.shape, (cfg.image_encoder.width,))
    if f"{BRIDGE}.embed.weight" in params:
        x = dense(params, f"{BRIDGE}.embed", x)
    return _unbatch(run_stack(params, BRIDGE, x, cfg.bridge), single)


# ---------------------------------------------------------------------------
# Joint embeddings
# ---------------------------------------------------------------------------

def pooled_image_tokens(params, image_patches, use_bridge: bool = True) -> Tensor:
    """Mean over tokens of ``encode_full`` (optionally passed through the bridge)."""
    tokens = encode_full(params, image_patches)
    if use_bridge:
        tokens = bridge_features(params, tokens)
    return ops.mean(tokens, axis=-2)


def image_embedding(params, image_patches, use_bridge: bool = True) -> Tensor:
    """Unit-norm joint-space embedding of full images.

    With ``use_bridge=False`` encoder tokens are pooled directly; that needs
    equal encoder and bridge widths because the projection head is shared.
    """
    cfg = params.config
    if not use_bridge and cfg.image_encoder.width != cfg.bridge.width:
        raise ShapeMismatchError("image_embedding", (cfg.image_encoder.width,),
                                 (cfg.bridge.width,), "pooling without bridge needs equal widths")
    pooled = pooled_image_tokens(params, image_patches, use_bridge)
    return ops.l2_normalize(ops.matmul(pooled, params[IMAGE_PROJ]))


def text_embedding(params, token_ids: Union[IntArray, Sequence[int]]) -> Tensor:
    """Unit-norm joint-space embedding of token id rows (pad id 0 is pooled out)."""
    cfg = params.config
    ids = np.asarray(token_ids, dtype=np.int64)
    single = ids.ndim == 1
    ids = np.atleast_2d(ids)
    length = ids.shape[1]
    if length == 0:
        raise TextEncodingError("text_embedding: empty token list")
    if length > cfg.max_text_len:
        raise ShapeMismatchError("text_embedding", ids.shape, (cfg.max_text_len,),
                                 "sequence longer than max_text_len")
    real = ids != PAD_ID
    counts = real.sum(axis=1)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise TextEncodingError(f"text_embedding: row {int(empty[0])} holds only padding")

    h = ops.add(ops.embedding(params[f"{TEXT_ENCODER}.tok_embed"], ids),
                ops.gather(params[f"{TEXT_ENCODER}.pos_embed"], np.arange(length)))
    h = run_stack(params, TEXT_ENCODER, h, cfg.text_encoder)
    weights = Tensor((real / counts[:, None])[..., None])
    pooled = ops.sum_(ops.mul(h, weights), axis=-2)
    out = ops.l2_normalize(ops.matmul(pooled, params[TEXT_PROJ]))
    return ops.reshape(out, out.shape[1:]) if single else out
