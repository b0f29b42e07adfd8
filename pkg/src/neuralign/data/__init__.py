"""Dataset manifests, binary embedding banks, ingestion, batching, synthesis."""

from .bank import (
    BadMagicError,
    BankFormatError,
    EmbeddingBank,
    PayloadSizeError,
    TruncatedPayloadError,
    VersionMismatchError,
    compute_relative_depth,
    read_bank,
    write_bank,
)
from .batching import batch_iter
from .ingest import (
    NeuralDataset,
    average_dataset,
    average_repetitions,
    read_neural,
    select_channels,
    write_neural,
    zscore_channels,
)
from .manifest import CATEGORIES, ConceptInfo, ImageInfo, PairManifest
from .synth import (
    DEFAULT_LAYER_SCHEDULE,
    SynthResult,
    SynthSpec,
    default_schedule,
    synth_generate,
)

__all__ = [
    "BadMagicError",
    "BankFormatError",
    "CATEGORIES",
    "ConceptInfo",
    "DEFAULT_LAYER_SCHEDULE",
    "EmbeddingBank",
    "ImageInfo",
    "NeuralDataset",
    "PairManifest",
    "PayloadSizeError",
    "SynthResult",
    "SynthSpec",
    "TruncatedPayloadError",
    "VersionMismatchError",
    "average_dataset",
    "average_repetitions",
    "batch_iter",
    "compute_relative_depth",
    "default_schedule",
    "read_bank",
    "read_neural",
    "select_channels",
    "synth_generate",
    "write_bank",
    "write_neural",
    "zscore_channels",
]
