"""Pydantic models for model, training, evaluation and data-generation configuration."""
from datetime import datetime
from pathlib import Path
from typing import Any, Optional

import yaml
from pydantic import BaseModel, Field, field_validator, model_validator

from src.enums import EvalMode, Variant


class TransformerConfig(BaseModel):
    """Shape of one transformer stack."""
    depth: int = Field(ge=0)
    width: int = Field(gt=0)
    heads: int = Field(gt=0)
    mlp_ratio: int = Field(default=4, gt=0)

    @model_validator(mode="after")
    def _heads_divide_width(self) -> "TransformerConfig":
        if self.width % self.heads != 0:
            raise ValueError(f"width {self.width} is not divisible by heads {self.heads}")
        return self

    def block_parameter_count(self) -> int:
        """Parameters in one pre-norm block: (4 + 2r)·d² + (9 + r)·d."""
        d, r = self.width, self.mlp_ratio
        return (4 + 2 * r) * d * d + (9 + r) * d


class ModelConfig(BaseModel):
    """Widths and depths of the five networks plus the image geometry."""
    image_height: int = Field(default=32, gt=0)
    image_width: int = Field(default=32, gt=0)
    channels: int = Field(default=3, gt=0)
    patch_size: int = Field(default=4, gt=0)

    image_encoder: TransformerConfig = Field(
        default_factory=lambda: TransformerConfig(depth=4, width=128, heads=4))
    pixel_decoder: TransformerConfig = Field(
        default_factory=lambda: TransformerConfig(depth=2, width=64, heads=4))
    bridge: TransformerConfig = Field(
        default_factory=lambda: TransformerConfig(depth=4, width=128, heads=4))
    feature_decoder: TransformerConfig = Field(
        default_factory=lambda: TransformerConfig(depth=4, width=64, heads=4))
    text_encoder: TransformerConfig = Field(
        default_factory=lambda: TransformerConfig(depth=2, width=128, heads=4))

    joint_dim: int = Field(default=64, gt=0)
    max_text_len: int = Field(default=16, gt=0)
    vocab_size: int = Field(default=2, ge=2)

    tau_init: float = Field(default=1.0 / 0.07, gt=0)
    tau_max: float = Field(default=100.0, gt=0)
    init_std: float = Field(default=0.02, gt=0)

    @model_validator(mode="after")
    def _check_geometry(self) -> "ModelConfig":
        p = self.patch_size
        if self.image_height % p or self.image_width % p:
            raise ValueError(
                f"patch_size {p} must divide image {self.image_height}x{self.image_width}")
        for name in ("image_encoder", "pixel_decoder", "feature_decoder"):
            width = getattr(self, name).width
            if width % 4:
                raise ValueError(f"{name}.width {width} must be divisible by 4 (sin-cos table)")
        if self.tau_init > self.tau_max:
            raise ValueError(f"tau_init {self.tau_init} exceeds tau_max {self.tau_max}")
        return self

    @property
    def num_patches(self) -> int:
        return (self.image_height // self.patch_size) * (self.image_width // self.patch_size)

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @classmethod
    def desk(cls, vocab_size: int = 2) -> "ModelConfig":
        """Desk-scale defaults (32×32×3 images, P=4)."""
        return cls(vocab_size=vocab_size)

    @classmethod
    def tiny(cls, vocab_size: int = 12) -> "ModelConfig":
        """Verification-size model used by gradient checks and tests."""
        small = dict(depth=1, width=8, heads=2)
        return cls(
            image_height=8,
            image_width=8,
            channels=3,
            patch_size=4,
            image_encoder=TransformerConfig(**small),
            pixel_decoder=TransformerConfig(**small),
            bridge=TransformerConfig(**small),
            feature_decoder=TransformerConfig(**small),
            text_encoder=TransformerConfig(**small),
            joint_dim=4,
            max_text_len=6,
            vocab_size=vocab_size,
        )


class TrainConfig(BaseModel):
    """All pre-training hyperparameters."""
    epochs: int = Field(default=200, gt=0)
    base_lr: float = Field(default=1.5e-4, gt=0)
    warmup_epochs: Optional[int] = Field(default=None, ge=0)
    batch_paired: int = Field(default=32, gt=0)
    batch_unpaired: int = Field(default=32, ge=0)
    mask_ratio: float = Field(default=0.75, gt=0, lt=1)
    ema_decay: float = Field(default=0.999, ge=0, le=1)
    lambda_lg_clip: float = Field(default=0.01, ge=0)
    lambda_mfd: float = Field(default=0.01, ge=0)
    weight_decay: float = Field(default=0.05, ge=0)
    beta1: float = Field(default=0.9, gt=0, lt=1)
    beta2: float = Field(default=0.95, gt=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)
    max_grad_norm: Optional[float] = Field(default=None, gt=0)
    seed: int = Field(default=0, ge=0)
    variant: Variant = Field(default=Variant.MASKEDCLIP)

    norm_pixel_targets: bool = False
    per_pixel_mse: bool = True
    distill_masked_only: bool = False

    checkpoint_every: int = Field(default=10, gt=0)
    log_every: int = Field(default=10, gt=0)

    @model_validator(mode="after")
    def _resolve_warmup(self) -> "TrainConfig":
        if self.warmup_epochs is None:
            # 40 of 200 epochs
            self.warmup_epochs = self.epochs // 5
        if self.warmup_epochs >= self.epochs:
            raise ValueError(
                f"warmup_epochs {self.warmup_epochs} must be smaller than epochs {self.epochs}")
        return self


class EvalConfig(BaseModel):
    """Downstream probe / fine-tune recipe."""
    mode: EvalMode = Field(default=EvalMode.PROBE)
    label_fraction: float = Field(default=1.0, gt=0, le=1)
    seed: int = Field(default=0, ge=0)
    test_fraction: float = Field(default=0.3, gt=0, lt=1)
    use_bridge: bool = False

    probe_iterations: int = Field(default=500, gt=0)
    probe_lr: float = Field(default=0.1, gt=0)
    probe_l2: float = Field(default=1e-4, ge=0)

    finetune_epochs: int = Field(default=20, gt=0)
    finetune_lr: float = Field(default=5e-4, gt=0)
    finetune_warmup_epochs: int = Field(default=4, ge=0)
    finetune_batch_size: int = Field(default=16, gt=0)
    finetune_weight_decay: float = Field(default=0.05, ge=0)

    @model_validator(mode="after")
    def _check_warmup(self) -> "EvalConfig":
        if self.finetune_warmup_epochs >= self.finetune_epochs:
            raise ValueError("finetune_warmup_epochs must be smaller than finetune_epochs")
        return self


class DataGenConfig(BaseModel):
    """Synthetic bundle generation parameters."""
    paired: int = Field(ge=1)
    unpaired: int = Field(default=0, ge=0)
    classes: int = Field(default=4, ge=2, le=8)
    height: int = Field(default=32, gt=0)
    width: int = Field(default=32, gt=0)
    channels: int = Field(default=3, gt=0)
    patch: int = Field(default=4, gt=0)
    seed: int = Field(default=0, ge=0)
    identifier_fraction: float = Field(default=0.0, ge=0, le=1)


class RunManifest(BaseModel):
    """Provenance record written next to every command's outputs."""
    command: str
    config: dict[str, Any]
    seed: int
    artifacts: dict[str, str] = Field(default_factory=dict)
    tool_version: str
    started_at: datetime
    finished_at: Optional[datetime] = None

    @field_validator("command")
    @classmethod
    def validate_command(cls, v: str) -> str:
        if not v:
            raise ValueError("command must be non-empty")
        return v

    def write(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.model_dump(mode="json"), f, sort_keys=True)


def load_run_config(path: str) -> dict[str, Any]:
    """Load a YAML run-config file; keys mirror CLI flag names."""
    config_path = Path(path)
    if not config_path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    with open(config_path, encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"Config file {path} must hold a mapping, got {type(data).__name__}")
    return {str(k).replace("-", "_"): v for k, v in data.items()}
