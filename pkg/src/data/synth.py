"""Deterministic procedural fundus-like images with class-dependent lesions.

Every item draws from its own stream ``Rng.derive(seed, "synth", i)``, so an
item's pixels depend only on (seed, index) and not on generation order.
"""
import numpy as np

from src.config.run_config import DataGenConfig
from src.data.bundle import DatasetBundle, identifier_label, make_bundle
from src.data.nb.raster_nb import render_fundus_nb
from src.data.prompts import make_caption, synthetic_class_names
from src.logging_config import get_logger
from src.model.patcher import PatchGrid
from src.numeric.rng import Rng
from src.types import FloatArray, IntArray, Label

logger = get_logger("data.synth")

BACKGROUND = 0.5
DISC_RADIUS_FRACTION = 0.4
CENTER_JITTER = 2
BLOB_RADII = (2, 3)
BRIGHT, DARK = 0.9, 0.1
NOISE_STD = 0.05


def balanced_classes(n: int, n_classes: int, rng: Rng) -> IntArray:
    """Shuffled ``i mod K`` assignment, so counts differ by at most one."""
    labels = np.arange(n, dtype=np.int64) % n_classes
    return labels[rng.permutation(n)]


def render_item(class_id: int, grid: PatchGrid, rng: Rng) -> FloatArray:
    """One H×W×C image of class ``class_id`` drawn from ``rng``."""
    h, w = grid.height, grid.width
    radius = DISC_RADIUS_FRACTION * h
    cy = (h - 1) / 2.0 + (rng.bounded(2 * CENTER_JITTER + 1) - CENTER_JITTER)
    cx = (w - 1) / 2.0 + (rng.bounded(2 * CENTER_JITTER + 1) - CENTER_JITTER)

    n_blobs = class_id + 1
    blob_y = np.empty(n_blobs)
    blob_x = np.empty(n_blobs)
    blob_r = np.empty(n_blobs)
    for b in range(n_blobs):
        r = float(BLOB_RADII[rng.bounded(len(BLOB_RADII))])
        reach = radius - r
        # rejection sample a centre that keeps the whole blob inside the disc
        while True:
            oy = (2.0 * rng.uniform() - 1.0) * reach
            ox = (2.0 * rng.uniform() - 1.0) * reach
            if oy * oy + ox * ox <= reach * reach:
                break
        blob_y[b], blob_x[b], blob_r[b] = cy + oy, cx + ox, r

    value = BRIGHT if class_id % 2 == 0 else DARK
    noise = rng.normal_array(grid.image_shape, std=NOISE_STD)
    out = np.empty(grid.image_shape, dtype=np.float32)
    return render_fundus_nb(out, cy, cx, radius, BACKGROUND, blob_y, blob_x, blob_r, value, noise)


def synth_generate(n_paired: int, n_unpaired: int, n_classes: int, grid: PatchGrid,
                   seed: int, identifier_fraction: float = 0.0,
                   max_text_len: int = 16) -> DatasetBundle:
    """Build a bundle of captioned paired items and image-only unpaired items.

    Args:
        n_paired: Paired (image, caption, label) count, at least 1.
        n_unpaired: Image-only count, may be 0.
        n_classes: Between 2 and 8.
        grid: Image geometry.
        seed: Root seed; all randomness derives from it.
        identifier_fraction: Share of paired items whose label is a unique
            ``uid-<index>`` tag instead of a class id.
        max_text_len: Token length recorded with the vocabulary.
    """
    if n_paired < 1 or n_unpaired < 0:
        raise ValueError(f"invalid counts: paired={n_paired}, unpaired={n_unpaired}")
    if not 2 <= n_classes <= 8:
        raise ValueError(f"n_classes must be in [2, 8], got {n_classes}")
    if not 0.0 <= identifier_fraction <= 1.0:
        raise ValueError(f"identifier_fraction must be in [0, 1], got {identifier_fraction}")

    names = synthetic_class_names(n_classes)
    paired_classes = balanced_classes(n_paired, n_classes, Rng.derive(seed, "classes", "paired"))
    unpaired_classes = balanced_classes(n_unpaired, n_classes,
                                        Rng.derive(seed, "classes", "unpaired"))
    n_ident = int(round(identifier_fraction * n_paired))
    ident_rows = set(Rng.derive(seed, "identifiers").permutation(n_paired)[:n_ident].tolist())

    paired = np.empty((n_paired,) + grid.image_shape, dtype=np.float32)
    captions: list[str] = []
    labels: list[Label] = []
    for i in range(n_paired):
        k = int(paired_classes[i])
        paired[i] = render_item(k, grid, Rng.derive(seed, "synth", i))
        captions.append(make_caption(names[k], None, Rng.derive(seed, "caption", i)))
        labels.append(identifier_label(i) if i in ident_rows else k)

    unpaired = np.empty((n_unpaired,) + grid.image_shape, dtype=np.float32)
    for j in range(n_unpaired):
        unpaired[j] = render_item(int(unpaired_classes[j]), grid,
                                  Rng.derive(seed, "synth", n_paired + j))

    logger.info("Generated %d paired (%d identifier-labelled) and %d unpaired images",
                n_paired, n_ident, n_unpaired)
    return make_bundle(paired, captions, labels, unpaired, names, grid, max_text_len)


def generate_from_config(config: DataGenConfig, max_text_len: int = 16) -> DatasetBundle:
    grid = PatchGrid(height=config.height, width=config.width,
                     channels=config.channels, patch=config.patch)
    return synth_generate(config.paired, config.unpaired, config.classes, grid, config.seed,
                          config.identifier_fraction, max_text_len)
