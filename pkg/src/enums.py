"""Shared enums for the MaskedCLIP desk platform."""
from enum import Enum, IntEnum


class Variant(str, Enum):
    """Pre-training variants (ablation switches)."""
    MASKEDCLIP = "maskedclip"
    MAE_CLIP_SHARED = "mae_clip_shared"
    MAE_CLIP_BRIDGE = "mae_clip_bridge"
    MAE_ONLY = "mae_only"
    CLIP_ONLY = "clip_only"


class EvalMode(str, Enum):
    """Downstream evaluation protocol."""
    PROBE = "probe"
    FINETUNE = "finetune"


class DTypeCode(IntEnum):
    """Element type codes used in binary archives."""
    F32 = 0
    F64 = 1


class LabelKind(IntEnum):
    """How a paired triplet's label is encoded on disk."""
    CATEGORICAL = 0
    IDENTIFIER = 1


class ExitCode(IntEnum):
    """Process exit codes for the command-line surface."""
    OK = 0
    VERIFICATION_FAILED = 1
    USAGE = 2
    IO = 3
