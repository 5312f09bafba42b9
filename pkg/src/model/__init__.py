"""MaskedCLIP model package.

Package structure:
- patcher     - patchify/unpatchify, mask plans, mask-token reassembly, sin-cos tables
- params      - named parameter map and initialisation
- transformer - pre-norm attention/MLP blocks
- networks    - image encoder, pixel decoder, bridge, feature decoder, text encoder
- momentum    - EMA shadow of encoder + bridge
- tokenizer   - caption vocabulary
- archive     - MCLP named-tensor files
"""

from src.model.momentum import MomentumParams, ema_update, momentum_target  # noqa: F401
from src.model.networks import (  # noqa: F401
    bridge_features,
    decode_features,
    decode_pixels,
    encode_full,
    encode_visible,
    image_embedding,
    text_embedding,
)
from src.model.params import ModelParams, init_params  # noqa: F401
from src.model.patcher import (  # noqa: F401
    MaskPlan,
    PatchGrid,
    assemble_with_mask_tokens,
    patchify,
    positional_embeddings,
    sample_mask,
    select_visible,
    unpatchify,
)
from src.model.tokenizer import Vocab, tokenize  # noqa: F401
