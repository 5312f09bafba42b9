"""Reconstruction preview: decoder predictions pasted into the masked patches."""
from typing import Optional

import numpy as np

from src.model.networks import decode_pixels, encode_visible
from src.model.params import ModelParams
from src.model.patcher import MaskPlan, PatchGrid, patchify, sample_mask, select_visible, unpatchify
from src.numeric.rng import Rng
from src.numeric.tensor import Tensor
from src.objectives.losses import mim_loss
from src.types import FloatArray


def reconstruct_image(
    params: ModelParams, image: FloatArray, plan: Optional[MaskPlan] = None,
    mask_ratio: float = 0.75, seed: int = 0,
) -> tuple[FloatArray, MaskPlan, float]:
    """Return ``(H×W×C image, plan, mim loss)``; visible patches keep their input pixels."""
    grid = PatchGrid.from_model_config(params.config)
    if plan is None:
        plan = sample_mask(grid.num_patches, mask_ratio, Rng.derive(seed, "reconstruct"))
    patches = patchify(Tensor(np.asarray(image)), grid)
    latents = encode_visible(params, select_visible(patches, plan), plan)
    pred = decode_pixels(params, latents, plan, grid)
    loss = mim_loss(pred, patches, plan).item()

    merged = np.array(patches.data)
    merged[plan.masked_idx] = pred.data[plan.masked_idx]
    return unpatchify(Tensor(merged), grid).data, plan, loss
