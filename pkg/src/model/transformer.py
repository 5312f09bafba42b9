"""Pre-norm transformer blocks over ``(batch, tokens, width)`` tensors."""
import math
from collections.abc import Mapping

from src.config.run_config import TransformerConfig
from src.numeric import ops
from src.numeric.tensor import Tensor


def _ln(params: Mapping, prefix: str, x: Tensor) -> Tensor:
    return ops.layer_norm(x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"])


def dense(params: Mapping, prefix: str, x: Tensor) -> Tensor:
    return ops.linear(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"])


def self_attention(params: Mapping, prefix: str, x: Tensor, heads: int) -> Tensor:
    """Multi-head scaled dot-product attention, no masking."""
    b, n, d = x.shape
    dh = d // heads

    def split(t: Tensor) -> Tensor:
        return ops.transpose(ops.reshape(t, (b, n, heads, dh)), (0, 2, 1, 3))

    q = split(dense(params, f"{prefix}.q", x))
    k = split(dense(params, f"{prefix}.k", x))
    v = split(dense(params, f"{prefix}.v", x))
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    mixed = ops.matmul(ops.softmax(scores), v)
    merged = ops.reshape(ops.transpose(mixed, (0, 2, 1, 3)), (b, n, d))
    return dense(params, f"{prefix}.o", merged)


def mlp(params: Mapping, prefix: str, x: Tensor) -> Tensor:
    return dense(params, f"{prefix}.fc2", ops.gelu(dense(params, f"{prefix}.fc1", x)))


def block(params: Mapping, prefix: str, x: Tensor, heads: int) -> Tensor:
    attended = self_attention(params, f"{prefix}.attn", _ln(params, f"{prefix}.ln1", x), heads)
    x = ops.add(x, attended)
    return ops.add(x, mlp(params, f"{prefix}.mlp", _ln(params, f"{prefix}.ln2", x)))


def run_stack(params: Mapping, prefix: str, x: Tensor, cfg: TransformerConfig) -> Tensor:
    """``cfg.depth`` blocks followed by the stack's final layer norm."""
    for i in range(cfg.depth):
        x = block(params, f"{prefix}.blocks.{i}", x, cfg.heads)
    return _ln(params, f"{prefix}.norm", x)
