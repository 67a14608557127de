# core library for kidney volumetry
from . import (
    constants,
    exceptions,
    fusion,
    measure,
    metrics,
    morphology,
    phantom,
    preprocess,
    qc,
    segmenter,
    volgrid,
    volume_io,
)

__all__ = [
    "constants",
    "exceptions",
    "fusion",
    "measure",
    "metrics",
    "morphology",
    "phantom",
    "preprocess",
    "qc",
    "segmenter",
    "volgrid",
    "volume_io",
]
