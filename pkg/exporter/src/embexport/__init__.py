"""Frozen-encoder embedding export to the EMB1 interchange format."""

from .emb1 import Emb1FormatError, read_embeddings, write_embeddings
from .export import (
    DatasetFormatError,
    EncoderUnavailableError,
    ExportManifest,
    VerifyReport,
    export_embeddings,
    unique_utterances,
    verify_export,
)

__version__ = "0.1.0"

__all__ = [
    "DatasetFormatError",
    "Emb1FormatError",
    "EncoderUnavailableError",
    "ExportManifest",
    "VerifyReport",
    "export_embeddings",
    "read_embeddings",
    "unique_utterances",
    "verify_export",
    "write_embeddings",
    "__version__",
]
