"""Joint paired/unpaired epoch sampling."""
import math
from typing import NamedTuple, Optional

import numpy as np

from src.data.bundle import DatasetBundle
from src.model.tokenizer import Vocab, tokenize_batch
from src.numeric.rng import Rng
from src.types import FloatArray, IntArray, Label


class SamplerError(ValueError):
    """Raised for batch sizes the bundle cannot serve."""


class JointBatch(NamedTuple):
    paired_idx: IntArray
    unpaired_idx: IntArray
    paired_images: FloatArray
    token_ids: IntArray
    labels: list[Label]
    unpaired_images: FloatArray

    @property
    def size(self) -> int:
        return len(self.paired_idx) + len(self.unpaired_idx)


def _driving_slices(n: int, batch: int, rng: Rng) -> list[IntArray]:
    perm = rng.permutation(n)
    return [perm[i:i + batch] for i in range(0, n, batch)]


def _recycled_slices(n: int, batch: int, n_batches: int, rng: Rng) -> list[IntArray]:
    needed = batch * n_batches
    chunks: list[IntArray] = []
    have = 0
    while have < needed:
        perm = rng.permutation(n)
        chunks.append(perm)
        have += n
    flat = np.concatenate(chunks)[:needed]
    return [flat[i * batch:(i + 1) * batch] for i in range(n_batches)]


def steps_per_epoch(n_paired: int, n_unpaired: int, bp: int, bu: int) -> int:
    """Batches per epoch: the stream needing more batches sets the count."""
    if n_unpaired == 0:
        return math.ceil(n_paired / bp)
    return math.ceil(max(n_paired / bp, n_unpaired / bu))


def epoch_index_plan(n_paired: int, n_unpaired: int, bp: int, bu: int,
                     rng: Rng) -> list[tuple[IntArray, IntArray]]:
    """Per-batch (paired, unpaired) index arrays for one epoch.

    The stream needing more batches is covered exactly once (its last batch
    may be partial); the other is reshuffled and recycled to keep pace.
    """
    if bp < 1:
        raise SamplerError(f"paired batch size must be >= 1, got {bp}")
    if bp > n_paired:
        raise SamplerError(f"paired batch size {bp} exceeds {n_paired} paired items")
    if n_unpaired > 0 and bu < 1:
        raise SamplerError(f"unpaired batch size must be >= 1 with {n_unpaired} unpaired items")
    if bu > n_unpaired and n_unpaired > 0:
        raise SamplerError(f"unpaired batch size {bu} exceeds {n_unpaired} unpaired items")

    if n_unpaired == 0:
        empty = np.empty(0, dtype=np.int64)
        return [(idx, empty) for idx in _driving_slices(n_paired, bp, rng)]

    ratio_p, ratio_u = n_paired / bp, n_unpaired / bu
    n_batches = steps_per_epoch(n_paired, n_unpaired, bp, bu)
    if ratio_p >= ratio_u:
        paired = _driving_slices(n_paired, bp, rng)
        unpaired = (_driving_slices(n_unpaired, bu, rng) if ratio_u == ratio_p
                    else _recycled_slices(n_unpaired, bu, n_batches, rng))
    else:
        paired = _recycled_slices(n_paired, bp, n_batches, rng)
        unpaired = _driving_slices(n_unpaired, bu, rng)
    return list(zip(paired, unpaired))


def sample_epoch(bundle: DatasetBundle, bp: int, bu: int, rng: Rng,
                 vocab: Optional[Vocab] = None) -> list[JointBatch]:
    """Materialise one epoch of joint batches.

    ``vocab`` overrides the bundle vocabulary (used to tokenise to the model's
    text length).
    """
    tokens = tokenize_batch(vocab or bundle.vocab, bundle.captions)
    batches = []
    for p_idx, u_idx in epoch_index_plan(bundle.n_paired, bundle.n_unpaired, bp, bu, rng):
        batches.append(JointBatch(
            paired_idx=p_idx,
            unpaired_idx=u_idx,
            paired_images=bundle.paired_images[p_idx],
            token_ids=tokens[p_idx],
            labels=[bundle.labels[i] for i in p_idx],
            unpaired_images=bundle.unpaired_images[u_idx],
        ))
    return batches


def positive_set(batch: JointBatch, anchor: int) -> list[int]:
    """Indices of paired items in ``batch`` whose label equals the anchor's."""
    n = len(batch.labels)
    if not 0 <= anchor < n:
        raise IndexError(f"anchor {anchor} out of range for a batch of {n} pairs")
    target = batch.labels[anchor]
    return [j for j, lbl in enumerate(batch.labels) if _same_label(lbl, target)]


def _same_label(a: Label, b: Label) -> bool:
    a_cat = isinstance(a, (int, np.integer))
    b_cat = isinstance(b, (int, np.integer))
    if a_cat != b_cat:
        return False
    return int(a) == int(b) if a_cat else str(a) == str(b)
