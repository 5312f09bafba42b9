"""Training objectives and their plain-numpy oracles."""
from src.objectives.losses import (  # noqa: F401
    ClipBatchFeatures,
    LossBreakdown,
    LossError,
    clip_losses,
    image_to_text_loss,
    label_guided_clip_loss,
    masked_feature_distillation_loss,
    mim_loss,
    text_to_image_loss,
    total_loss,
)
