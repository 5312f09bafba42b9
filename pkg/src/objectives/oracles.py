"""Plain-numpy reference implementations used to cross-check the differentiable losses."""
import numpy as np

from src.types import FloatArray, IntArray


def _log_softmax_rows(z: FloatArray) -> FloatArray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def vanilla_infonce(image_embeds: FloatArray, text_embeds: FloatArray, tau: float) -> float:
    """Symmetric CLIP loss where only the diagonal pair is positive."""
    logits = tau * (np.asarray(image_embeds, np.float64) @ np.asarray(text_embeds, np.float64).T)
    i2t = -np.mean(np.diag(_log_softmax_rows(logits)))
    t2i = -np.mean(np.diag(_log_softmax_rows(logits.T)))
    return float(0.5 * i2t + 0.5 * t2i)


def two_way_softmax_loss(matched: float, mismatched: float, tau: float) -> float:
    """``−log(e^{τ·m} / (e^{τ·m} + e^{τ·u}))`` for a single anchor."""
    a, b = tau * matched, tau * mismatched
    return float(-(a - np.logaddexp(a, b)))


def mim_reference(pred: FloatArray, target: FloatArray, masked_idx: IntArray,
                  per_pixel: bool = True) -> float:
    """Loop form of the masked reconstruction loss for one image."""
    total = 0.0
    for i in masked_idx:
        err = float(np.sum((np.asarray(target[i], np.float64) - pred[i]) ** 2))
        total += err / pred.shape[1] if per_pixel else err
    return total / len(masked_idx)


def cosine_distill_reference(pred: FloatArray, target: FloatArray) -> float:
    """Mean negative cosine over rows, with exact (unguarded) norms."""
    p = np.asarray(pred, np.float64)
    t = np.asarray(target, np.float64)
    cos = (p * t).sum(axis=1) / (np.linalg.norm(p, axis=1) * np.linalg.norm(t, axis=1))
    return float(-cos.mean())
