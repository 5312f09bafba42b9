"""Image/patch-sequence conversion, random masking and mask-token reassembly.

Every function accepts a single image (``H×W×C`` / ``N×d``) or a batch with a
leading axis. Batched masking takes a list of :class:`MaskPlan`, one per item;
all plans in a batch share the same visible count because they share a ratio.
"""
import math
from functools import lru_cache
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from src.numeric import ops
from src.numeric.rng import Rng
from src.numeric.tensor import ShapeMismatchError, Tensor, as_tensor
from src.types import FloatArray, IntArray


class MaskingError(ValueError):
    """Raised for mask ratios or plans that cannot be honoured."""


class PatchGrid(BaseModel):
    """Image geometry: H×W×C cut into P×P patches."""
    height: int = Field(gt=0)
    width: int = Field(gt=0)
    channels: int = Field(gt=0)
    patch: int = Field(gt=0)

    @model_validator(mode="after")
    def _check_divisible(self) -> "PatchGrid":
        if self.height % self.patch or self.width % self.patch:
            raise ValueError(
                f"patch {self.patch} must divide image {self.height}x{self.width}")
        if self.num_patches < 2:
            raise ValueError(f"grid yields {self.num_patches} patch(es); need at least 2")
        return self

    @property
    def rows(self) -> int:
        return self.height // self.patch

    @property
    def cols(self) -> int:
        return self.width // self.patch

    @property
    def num_patches(self) -> int:
        return self.rows * self.cols

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    @classmethod
    def from_model_config(cls, config) -> "PatchGrid":
        return cls(height=config.image_height, width=config.image_width,
                   channels=config.channels, patch=config.patch_size)


class MaskPlan(NamedTuple):
    visible_idx: IntArray
    masked_idx: IntArray
    ratio: float

    @property
    def num_patches(self) -> int:
        return len(self.visible_idx) + len(self.masked_idx)

    @classmethod
    def all_visible(cls, n_patches: int) -> "MaskPlan":
        return cls(np.arange(n_patches, dtype=np.int64), np.empty(0, dtype=np.int64), 0.0)


PlanOrPlans = Union[MaskPlan, Sequence[MaskPlan]]


# ---------------------------------------------------------------------------
# Patch layout
# ---------------------------------------------------------------------------

def patchify(image, grid: PatchGrid) -> Tensor:
    """``(…, H, W, C)`` → ``(…, N, P·P·C)``.

    Patches are enumerated row-major over the grid; each row is the raster
    flattening of its patch with channels last.
    """
    x = as_tensor(image)
    if tuple(x.shape[-3:]) != grid.image_shape:
        raise ShapeMismatchError("patchify", x.shape, grid.image_shape, "image does not match grid")
    lead = x.shape[:-3]
    k = len(lead)
    p, gh, gw, c = grid.patch, grid.rows, grid.cols, grid.channels
    y = ops.reshape(x, lead + (gh, p, gw, p, c))
    axes = tuple(range(k)) + (k, k + 2, k + 1, k + 3, k + 4)
    y = ops.transpose(y, axes)
    return ops.reshape(y, lead + (grid.num_patches, grid.patch_dim))


def unpatchify(patches, grid: PatchGrid) -> Tensor:
    """Exact inverse of :func:`patchify`."""
    x = as_tensor(patches)
    if tuple(x.shape[-2:]) != (grid.num_patches, grid.patch_dim):
        raise ShapeMismatchError("unpatchify", x.shape, (grid.num_patches, grid.patch_dim))
    lead = x.shape[:-2]
    k = len(lead)
    p, gh, gw, c = grid.patch, grid.rows, grid.cols, grid.channels
    y = ops.reshape(x, lead + (gh, gw, p, p, c))
    axes = tuple(range(k)) + (k, k + 2, k + 1, k + 3, k + 4)
    y = ops.transpose(y, axes)
    return ops.reshape(y, lead + grid.image_shape)


# ---------------------------------------------------------------------------
# Masking
# ---------------------------------------------------------------------------

def visible_count(n_patches: int, ratio: float) -> int:
    return math.floor(n_patches * (1.0 - ratio))


def sample_mask(n_patches: int, ratio: float, rng: Rng) -> MaskPlan:
    """Uniform random partition: the first ⌊n(1−ratio)⌋ of a shuffle are visible."""
    if not 0.0 < ratio < 1.0:
        raise MaskingError(f"mask ratio must lie in (0, 1), got {ratio}")
    n_visible = visible_count(n_patches, ratio)
    if n_visible < 1 or n_visible >= n_patches:
        raise MaskingError(
            f"ratio {ratio} on {n_patches} patches leaves {n_visible} visible; "
            "need at least one visible and one masked patch")
    perm = rng.permutation(n_patches)
    return MaskPlan(np.sort(perm[:n_visible]), np.sort(perm[n_visible:]), float(ratio))


def _stack_plans(plans: Sequence[MaskPlan]) -> tuple[IntArray, IntArray]:
    counts = {len(p.visible_idx) for p in plans}
    if len(counts) != 1:
        raise MaskingError(f"plans in one batch must share a visible count, got {sorted(counts)}")
    return (np.stack([p.visible_idx for p in plans]), np.stack([p.masked_idx for p in plans]))


def plan_indices(plan: PlanOrPlans) -> tuple[IntArray, IntArray]:
    """Visible and masked index arrays, 2-D when a list of plans is given."""
    if isinstance(plan, MaskPlan):
        return plan.visible_idx, plan.masked_idx
    return _stack_plans(plan)


def select_visible(seq, plan: PlanOrPlans) -> Tensor:
    visible, _ = plan_indices(plan)
    return ops.gather(as_tensor(seq), visible)


def assemble_with_mask_tokens(latent_visible, mask_token, plan: PlanOrPlans, pos_embed) -> Tensor:
    """Place latents back at their positions, fill the rest with ``mask_token``, add positions."""
    latent = as_tensor(latent_visible)
    token = as_tensor(mask_token)
    pos = as_tensor(pos_embed)
    visible, masked = plan_indices(plan)
    d = latent.shape[-1]
    if token.shape != (1, d):
        raise ShapeMismatchError("assemble_with_mask_tokens", latent.shape, token.shape,
                                 "mask token must be 1×d")
    n = visible.shape[-1] + masked.shape[-1]
    if pos.shape != (n, d):
        raise ShapeMismatchError("assemble_with_mask_tokens", latent.shape, pos.shape,
                                 f"positional table must be {n}×{d}")
    if latent.shape[-2] != visible.shape[-1]:
        raise ShapeMismatchError("assemble_with_mask_tokens", latent.shape, visible.shape,
                                 "latent rows differ from visible count")

    lead = latent.shape[:-2]
    parts = [latent]
    if masked.shape[-1]:
        parts.append(ops.expand(token, lead + (masked.shape[-1], d)))
    full = ops.concat(parts, axis=-2) if len(parts) > 1 else latent
    restore = np.argsort(np.concatenate([visible, masked], axis=-1), axis=-1, kind="stable")
    return ops.add(ops.gather(full, restore), pos)


# ---------------------------------------------------------------------------
# Positional tables
# ---------------------------------------------------------------------------

def _sincos_1d(d: int, positions: FloatArray) -> FloatArray:
    omega = np.arange(d // 2, dtype=np.float64) / (d / 2.0)
    omega = 1.0 / 10000.0 ** omega
    angles = np.outer(positions, omega)
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


@lru_cache(maxsize=32)
def _sincos_2d(rows: int, cols: int, d: int) -> FloatArray:
    gy, gx = np.meshgrid(np.arange(rows, dtype=np.float64),
                         np.arange(cols, dtype=np.float64), indexing="ij")
    table = np.concatenate(
        [_sincos_1d(d // 2, gy.reshape(-1)), _sincos_1d(d // 2, gx.reshape(-1))], axis=1)
    table.flags.writeable = False
    return table


def positional_embeddings(
    n_patches: int, d: int, grid_shape: Optional[tuple[int, int]] = None
) -> FloatArray:
    """Fixed 2-D sine-cosine table of shape ``(n_patches, d)``.

    The first half of the columns encodes the grid row, the second half the
    grid column. ``grid_shape`` defaults to a square grid.
    """
    if d % 4:
        raise ValueError(f"positional width {d} must be divisible by 4")
    if grid_shape is None:
        side = math.isqrt(n_patches)
        if side * side != n_patches:
            raise ValueError(f"{n_patches} patches is not a square grid; pass grid_shape")
        grid_shape = (side, side)
    rows, cols = grid_shape
    if rows * cols != n_patches:
        raise ValueError(f"grid {rows}x{cols} does not hold {n_patches} patches")
    return _sincos_2d(rows, cols, d)
