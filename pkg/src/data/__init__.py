"""MaskedCLIP data package: synthetic generation, bundle files and joint batch sampling."""
from src.data.bundle import (
    BundleFormatError,
    DatasetBundle,
    PairedTriplet,
    UnpairedImage,
    load_bundle,
    serialize_bundle,
)
from src.data.prompts import CAPTION_TEMPLATES, make_caption
from src.data.sampler import JointBatch, positive_set, sample_epoch
from src.data.synth import synth_generate

__all__ = [
    "BundleFormatError",
    "CAPTION_TEMPLATES",
    "DatasetBundle",
    "JointBatch",
    "PairedTriplet",
    "UnpairedImage",
    "load_bundle",
    "make_caption",
    "positive_set",
    "sample_epoch",
    "serialize_bundle",
    "synth_generate",
]
