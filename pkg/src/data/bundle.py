"""Paired/unpaired dataset records and the MCDB bundle file.

MCDB layout (little-endian)::

    b"MCDB"  u8 version
    u32 H, u32 W, u32 C, u32 P, u32 max_text_len
    u32 class count, then per class: u32 length + UTF-8 name
    u64 N^p, u64 N^u
    per paired item: u32 length + UTF-8 caption, u8 label kind,
                     i64 class id (categorical) or u32 length + UTF-8 tag (identifier)
    N^p·H·W·C f32 paired pixels, then N^u·H·W·C f32 unpaired pixels

The vocabulary is not stored; it is rebuilt from the captions on load.
"""
import struct
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np

from src.enums import LabelKind
from src.logging_config import get_logger
from src.model.archive import ByteReader
from src.model.patcher import PatchGrid
from src.model.tokenizer import Vocab, tokenize_batch
from src.types import FloatArray, IntArray, Label

logger = get_logger("data.bundle")

MAGIC = b"MCDB"
FORMAT_VERSION = 1

_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_I64 = struct.Struct("<q")
_F32 = np.dtype("<f4")


class BundleFormatError(ValueError):
    """Raised for bad magic, unsupported versions or truncated bundle files."""


class PairedTriplet(NamedTuple):
    image: FloatArray
    text: str
    label: Label


class UnpairedImage(NamedTuple):
    image: FloatArray


class DatasetBundle(NamedTuple):
    """Array-backed paired and unpaired sets plus the caption vocabulary."""
    paired_images: FloatArray
    captions: list[str]
    labels: list[Label]
    unpaired_images: FloatArray
    class_names: list[str]
    vocab: Vocab
    grid: PatchGrid

    @property
    def n_paired(self) -> int:
        return int(self.paired_images.shape[0])

    @property
    def n_unpaired(self) -> int:
        return int(self.unpaired_images.shape[0])

    @property
    def paired(self) -> list[PairedTriplet]:
        return [PairedTriplet(self.paired_images[i], self.captions[i], self.labels[i])
                for i in range(self.n_paired)]

    @property
    def unpaired(self) -> list[UnpairedImage]:
        return [UnpairedImage(img) for img in self.unpaired_images]

    def token_ids(self) -> IntArray:
        return tokenize_batch(self.vocab, self.captions)

    def categorical_rows(self) -> tuple[IntArray, IntArray]:
        """Indices and class ids of the paired items that carry a categorical label."""
        rows = [i for i, lbl in enumerate(self.labels) if is_categorical(lbl)]
        return (np.asarray(rows, dtype=np.int64),
                np.asarray([int(self.labels[i]) for i in rows], dtype=np.int64))


def is_categorical(label: Label) -> bool:
    return isinstance(label, (int, np.integer))


def identifier_label(index: int) -> str:
    return f"uid-{index}"


def make_bundle(paired_images: FloatArray, captions: list[str], labels: list[Label],
                unpaired_images: FloatArray, class_names: list[str], grid: PatchGrid,
                max_text_len: int = 16) -> DatasetBundle:
    """Validate shapes and label uniqueness, build the vocab, return a bundle."""
    shape = grid.image_shape
    paired_images = np.asarray(paired_images, dtype=np.float32)
    unpaired_images = np.asarray(unpaired_images, dtype=np.float32).reshape((-1,) + shape)
    if paired_images.shape[1:] != shape:
        raise ValueError(f"paired images have shape {paired_images.shape[1:]}, grid wants {shape}")
    if not (len(captions) == len(labels) == paired_images.shape[0]):
        raise ValueError("paired images, captions and labels must have equal length")
    identifiers = [lbl for lbl in labels if not is_categorical(lbl)]
    if len(set(identifiers)) != len(identifiers):
        raise ValueError("identifier labels must be unique across paired items")
    vocab = Vocab.build(captions, max_len=max_text_len)
    return DatasetBundle(paired_images, list(captions), list(labels), unpaired_images,
                         list(class_names), vocab, grid)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _pack_text(text: str) -> bytes:
    raw = text.encode("utf-8")
    return _U32.pack(len(raw)) + raw


def encode_bundle(bundle: DatasetBundle) -> bytes:
    g = bundle.grid
    parts = [MAGIC, _U8.pack(FORMAT_VERSION)]
    parts += [_U32.pack(v) for v in (g.height, g.width, g.channels, g.patch, bundle.vocab.max_len)]
    parts.append(_U32.pack(len(bundle.class_names)))
    parts += [_pack_text(name) for name in bundle.class_names]
    parts += [_U64.pack(bundle.n_paired), _U64.pack(bundle.n_unpaired)]
    for caption, label in zip(bundle.captions, bundle.labels):
        parts.append(_pack_text(caption))
        if is_categorical(label):
            parts += [_U8.pack(LabelKind.CATEGORICAL), _I64.pack(int(label))]
        else:
            parts += [_U8.pack(LabelKind.IDENTIFIER), _pack_text(str(label))]
    parts.append(np.ascontiguousarray(bundle.paired_images, dtype=_F32).tobytes())
    parts.append(np.ascontiguousarray(bundle.unpaired_images, dtype=_F32).tobytes())
    return b"".join(parts)


def decode_bundle(buf: bytes, source: str = "<bytes>") -> DatasetBundle:
    cur = ByteReader(buf, source, error=BundleFormatError)
    magic = cur.take(len(MAGIC))
    if magic != MAGIC:
        raise BundleFormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    version = cur.unpack(_U8)
    if version != FORMAT_VERSION:
        raise BundleFormatError(f"{source}: bundle version {version} is not supported")
    height, width, channels, patch, max_len = (cur.unpack(_U32) for _ in range(5))
    try:
        grid = PatchGrid(height=height, width=width, channels=channels, patch=patch)
    except ValueError as e:
        raise BundleFormatError(f"{source}: invalid geometry: {e}") from e
    class_names = [cur.text() for _ in range(cur.unpack(_U32))]
    n_paired, n_unpaired = cur.unpack(_U64), cur.unpack(_U64)

    captions: list[str] = []
    labels: list[Label] = []
    for _ in range(n_paired):
        captions.append(cur.text())
        kind = cur.unpack(_U8)
        if kind == LabelKind.CATEGORICAL:
            labels.append(cur.unpack(_I64))
        elif kind == LabelKind.IDENTIFIER:
            labels.append(cur.text())
        else:
            raise BundleFormatError(f"{source}: unknown label kind {kind}")

    pixels = height * width * channels
    paired = np.frombuffer(cur.take(n_paired * pixels * 4), dtype=_F32)
    unpaired = np.frombuffer(cur.take(n_unpaired * pixels * 4), dtype=_F32)
    if not cur.at_end():
        raise BundleFormatError(f"{source}: {len(buf) - cur.pos} trailing bytes")
    shape = (height, width, channels)
    return make_bundle(paired.reshape((n_paired,) + shape).astype(np.float32),
                       captions, labels,
                       unpaired.reshape((n_unpaired,) + shape).astype(np.float32),
                       class_names, grid, max_text_len=max_len)


def serialize_bundle(bundle: DatasetBundle, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_bundle(bundle))
    logger.info("Wrote bundle: %d paired, %d unpaired", bundle.n_paired, bundle.n_unpaired,
                extra={"path": str(path)})
    return path


def load_bundle(path: Union[str, Path]) -> DatasetBundle:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Bundle not found: {path}")
    return decode_bundle(path.read_bytes(), source=str(path))
