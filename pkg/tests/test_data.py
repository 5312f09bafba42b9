"""Tests for captions, synthetic generation, the MCDB bundle and joint sampling."""
import math
from collections import Counter

import numpy as np
import pytest

from src.config.run_config import DataGenConfig
from src.data.bundle import (
    MAGIC,
    BundleFormatError,
    decode_bundle,
    encode_bundle,
    identifier_label,
    is_categorical,
    load_bundle,
    make_bundle,
    serialize_bundle,
)
from src.data.prompts import CAPTION_TEMPLATES, make_caption, synthetic_class_names
from src.data.sampler import (
    JointBatch,
    SamplerError,
    epoch_index_plan,
    positive_set,
    sample_epoch,
    steps_per_epoch,
)
from src.data.synth import balanced_classes, generate_from_config, synth_generate
from src.model.patcher import PatchGrid
from src.numeric.rng import Rng


def _batch(labels):
    n = len(labels)
    return JointBatch(np.arange(n), np.empty(0, dtype=np.int64), np.zeros((n, 1)),
                      np.zeros((n, 1), dtype=np.int64), list(labels), np.zeros((0, 1)))


# ── Captions ─────────────────────────────────────────────────────────────


class TestPrompts:
    def test_template_zero(self):
        """Template 0 with "drusen" reads "a fundus image showing drusen"."""
        assert make_caption("drusen", 0) == "a fundus image showing drusen"

    def test_at_least_four_templates(self):
        """There are at least four templates."""
        assert len(CAPTION_TEMPLATES) >= 4

    def test_deterministic_draw(self):
        """A seeded template draw repeats."""
        assert make_caption("x", rng=Rng(4)) == make_caption("x", rng=Rng(4))

    def test_distinct_classes_distinct_captions(self):
        """Different classes never share a caption under any template."""
        names = synthetic_class_names(8)
        for t in range(len(CAPTION_TEMPLATES)):
            captions = [make_caption(name, t) for name in names]
            assert len(set(captions)) == len(names)

    @pytest.mark.parametrize("args", [("", 0, None), ("a", None, None), ("a", 9, None)])
    def test_invalid_arguments(self, args):
        """Empty names, missing template sources and bad ids are rejected."""
        with pytest.raises(ValueError):
            make_caption(*args)

    def test_class_names(self):
        """Names describe lesion count and tone."""
        assert synthetic_class_names(2) == ["one bright lesion", "two dark lesions"]
        with pytest.raises(ValueError):
            synthetic_class_names(9)


# ── Synthetic generation ─────────────────────────────────────────────────


class TestSynth:
    def test_bitwise_deterministic(self, tiny_grid):
        """Same seed, same bundle bytes."""
        a = synth_generate(6, 3, 3, tiny_grid, seed=7)
        b = synth_generate(6, 3, 3, tiny_grid, seed=7)
        assert encode_bundle(a) == encode_bundle(b)

    def test_seed_changes_pixels(self, tiny_grid):
        """Different seeds give different pixels."""
        a = synth_generate(4, 0, 2, tiny_grid, seed=1)
        b = synth_generate(4, 0, 2, tiny_grid, seed=2)
        assert not np.array_equal(a.paired_images, b.paired_images)

    def test_balanced_classes(self):
        """100 items over 4 classes gives exactly 25 each."""
        grid = PatchGrid(height=8, width=8, channels=1, patch=4)
        bundle = synth_generate(100, 0, 4, grid, seed=0)
        assert Counter(bundle.labels) == {0: 25, 1: 25, 2: 25, 3: 25}
        assert sorted(Counter(balanced_classes(10, 3, Rng(0)).tolist()).values()) == [3, 3, 4]

    def test_pixels_in_unit_range(self, tiny_bundle):
        """All pixels lie in [0, 1]."""
        for images in (tiny_bundle.paired_images, tiny_bundle.unpaired_images):
            assert images.min() >= 0.0 and images.max() <= 1.0

    def test_captions_name_the_class(self, tiny_bundle):
        """Each caption mentions its item's class name."""
        for caption, label in zip(tiny_bundle.captions, tiny_bundle.labels):
            assert tiny_bundle.class_names[label] in caption

    def test_identifier_fraction(self, mixed_label_bundle):
        """Half of 12 pairs carry unique identifier labels."""
        identifiers = [lbl for lbl in mixed_label_bundle.labels if not is_categorical(lbl)]
        assert len(identifiers) == 6
        assert len(set(identifiers)) == 6
        assert all(lbl.startswith("uid-") for lbl in identifiers)
        rows, classes = mixed_label_bundle.categorical_rows()
        assert len(rows) == 6 and classes.max() < 3

    @pytest.mark.parametrize("classes", [1, 9])
    def test_class_count_bounds(self, tiny_grid, classes):
        """Class counts outside [2, 8] are rejected."""
        with pytest.raises(ValueError):
            synth_generate(4, 0, classes, tiny_grid, seed=0)

    def test_item_independent_of_count(self, tiny_grid):
        """An item's pixels depend only on seed and index."""
        small = synth_generate(3, 0, 2, tiny_grid, seed=9)
        large = synth_generate(6, 0, 2, tiny_grid, seed=9)
        for i in range(3):
            if small.labels[i] == large.labels[i]:
                np.testing.assert_array_equal(small.paired_images[i], large.paired_images[i])

    def test_from_config(self):
        """DataGenConfig drives generation."""
        cfg = DataGenConfig(paired=4, unpaired=2, classes=2, height=8, width=8, patch=4)
        bundle = generate_from_config(cfg)
        assert (bundle.n_paired, bundle.n_unpaired) == (4, 2)
        assert bundle.grid.image_shape == (8, 8, 3)


# ── Bundle file ──────────────────────────────────────────────────────────


class TestBundle:
    def test_roundtrip_bytes(self, mixed_label_bundle):
        """decode then encode reproduces the bytes exactly."""
        buf = encode_bundle(mixed_label_bundle)
        back = decode_bundle(buf)
        assert encode_bundle(back) == buf
        assert back.labels == mixed_label_bundle.labels
        assert back.vocab.tokens == mixed_label_bundle.vocab.tokens

    def test_file_roundtrip(self, tiny_bundle, tmp_path):
        """serialize_bundle then load_bundle preserves pixels and captions."""
        path = serialize_bundle(tiny_bundle, tmp_path / "b.mcdb")
        back = load_bundle(path)
        np.testing.assert_array_equal(back.paired_images, tiny_bundle.paired_images)
        assert back.captions == tiny_bundle.captions

    def test_bad_magic(self, tiny_bundle):
        """A corrupt magic is refused."""
        buf = b"MCLP" + encode_bundle(tiny_bundle)[4:]
        with pytest.raises(BundleFormatError, match="magic"):
            decode_bundle(buf)
        assert encode_bundle(tiny_bundle)[:4] == MAGIC

    def test_truncated(self, tiny_bundle):
        """A truncated bundle is refused."""
        with pytest.raises(BundleFormatError):
            decode_bundle(encode_bundle(tiny_bundle)[:-10])

    def test_no_unpaired(self, tiny_grid):
        """A bundle with zero unpaired images is valid."""
        bundle = synth_generate(3, 0, 2, tiny_grid, seed=0)
        back = decode_bundle(encode_bundle(bundle))
        assert back.n_unpaired == 0 and back.unpaired == []

    def test_duplicate_identifiers_rejected(self, tiny_grid):
        """Identifier labels must be unique."""
        images = np.zeros((2, 8, 8, 3))
        with pytest.raises(ValueError):
            make_bundle(images, ["a", "b"], ["uid-0", "uid-0"], np.zeros((0, 8, 8, 3)),
                        ["c"], tiny_grid)

    def test_missing_file(self, tmp_path):
        """Loading a missing bundle raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            load_bundle(tmp_path / "nope.mcdb")

    def test_views(self, tiny_bundle):
        """Triplet and image views line up with the arrays."""
        first = tiny_bundle.paired[0]
        assert first.text == tiny_bundle.captions[0]
        assert len(tiny_bundle.unpaired) == 8
        assert identifier_label(3) == "uid-3"
        assert tiny_bundle.token_ids().shape == (8, 6)


# ── Joint sampling ───────────────────────────────────────────────────────


class TestSampler:
    def test_equal_ratios_cover_once(self):
        """N^p=N^u=4, bp=bu=2 → 2 batches covering each set exactly once."""
        plan = epoch_index_plan(4, 4, 2, 2, Rng(0))
        assert len(plan) == 2
        assert sorted(np.concatenate([p for p, _ in plan]).tolist()) == [0, 1, 2, 3]
        assert sorted(np.concatenate([u for _, u in plan]).tolist()) == [0, 1, 2, 3]

    def test_deterministic(self, tiny_bundle):
        """A fixed seed yields identical batch sequences."""
        a = sample_epoch(tiny_bundle, 4, 4, Rng(1))
        b = sample_epoch(tiny_bundle, 4, 4, Rng(1))
        assert [x.paired_idx.tolist() for x in a] == [x.paired_idx.tolist() for x in b]
        assert [x.unpaired_idx.tolist() for x in a] == [x.unpaired_idx.tolist() for x in b]

    def test_recycled_paired_counts(self):
        """A recycled stream repeats each index ⌈batches·bp/N^p⌉ ± 1 times."""
        n_p, n_u, bp, bu = 5, 40, 4, 4
        plan = epoch_index_plan(n_p, n_u, bp, bu, Rng(2))
        assert len(plan) == 10
        counts = Counter(np.concatenate([p for p, _ in plan]).tolist())
        expected = math.ceil(len(plan) * bp / n_p)
        assert set(counts) == set(range(n_p))
        assert all(abs(c - expected) <= 1 for c in counts.values())
        unpaired = np.concatenate([u for _, u in plan])
        assert sorted(unpaired.tolist()) == list(range(n_u))

    def test_partial_last_batch(self):
        """The driving stream's last batch may be partial."""
        plan = epoch_index_plan(5, 0, 2, 0, Rng(0))
        assert [len(p) for p, _ in plan] == [2, 2, 1]
        assert all(len(u) == 0 for _, u in plan)

    @pytest.mark.parametrize("n_p,n_u,bp,bu,steps", [
        (8, 8, 4, 4, 2), (5, 0, 2, 0, 3), (4, 10, 2, 3, 4), (9, 2, 3, 2, 3),
    ])
    def test_steps_per_epoch(self, n_p, n_u, bp, bu, steps):
        """The stream needing more batches sets the count."""
        assert steps_per_epoch(n_p, n_u, bp, bu) == steps
        assert len(epoch_index_plan(n_p, n_u, bp, bu, Rng(0))) == steps

    def test_oversized_batches_rejected(self):
        """Batch sizes larger than their set are rejected."""
        with pytest.raises(SamplerError):
            epoch_index_plan(3, 0, 4, 0, Rng(0))
        with pytest.raises(SamplerError):
            epoch_index_plan(4, 2, 2, 3, Rng(0))
        with pytest.raises(SamplerError):
            epoch_index_plan(4, 2, 2, 0, Rng(0))

    def test_batch_contents(self, tiny_bundle):
        """Batches carry the indexed images, labels and tokens."""
        batch = sample_epoch(tiny_bundle, 4, 4, Rng(3))[0]
        i = int(batch.paired_idx[0])
        np.testing.assert_array_equal(batch.paired_images[0], tiny_bundle.paired_images[i])
        assert batch.labels[0] == tiny_bundle.labels[i]
        assert batch.size == 8


class TestPositiveSet:
    def test_unique_labels(self):
        """All-unique labels: the anchor alone."""
        assert positive_set(_batch(["uid-0", "uid-1", "uid-2"]), 1) == [1]

    def test_shared_class(self):
        """Labels [a, a, b], anchor 0 → {0, 1}."""
        assert positive_set(_batch([2, 2, 5]), 0) == [0, 1]

    def test_symmetric(self):
        """j ∈ P(i) iff i ∈ P(j)."""
        batch = _batch([0, 1, 0, "uid-3", 1, 0])
        for i in range(6):
            for j in positive_set(batch, i):
                assert i in positive_set(batch, j)

    def test_out_of_range(self):
        """An anchor outside the batch raises IndexError."""
        with pytest.raises(IndexError):
            positive_set(_batch([0]), 1)
