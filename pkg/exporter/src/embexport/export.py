"""Frozen-encoder embedding export and verification."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .emb1 import Emb1FormatError, read_embeddings, write_embeddings

SPLIT_KEYS = ("train", "val", "test", "oos_train", "oos_val", "oos_test")

# tokenizers loaded from a bare vocab report a sentinel "no limit" value
_SANE_LENGTH_CAP = 100_000


class DatasetFormatError(ValueError):
    pass


class EncoderUnavailableError(RuntimeError):
    pass


def unique_utterances(dataset_path) -> list[str]:
    """All distinct texts across every split, in first-occurrence order."""
    try:
        payload = json.loads(Path(dataset_path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise DatasetFormatError("top level must be a JSON object")
    missing = [key for key in SPLIT_KEYS if key not in payload]
    if missing:
        raise DatasetFormatError(f"missing split key(s): {', '.join(missing)}")
    seen: dict[str, None] = {}
    for key in SPLIT_KEYS:
        rows = payload[key]
        if not isinstance(rows, list):
            raise DatasetFormatError(f"{key} must be a list")
        for i, row in enumerate(rows):
            if (not isinstance(row, list) or len(row) != 2
                    or not isinstance(row[0], str) or not isinstance(row[1], str)):
                raise DatasetFormatError(f"malformed pair at {key}[{i}]")
            seen.setdefault(row[0])
    return list(seen)


@dataclass
class ExportManifest:
    encoder_id: str
    pooling: str
    dim: int
    dataset: str
    records: int
    sha256: str
    warnings: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "encoder_id": self.encoder_id, "pooling": self.pooling,
            "dim": self.dim, "dataset": self.dataset, "records": self.records,
            "sha256": self.sha256, "warnings": self.warnings,
        }


def manifest_path_for(out_path) -> Path:
    return Path(str(out_path) + ".manifest.json")


def load_manifest(path) -> ExportManifest:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return ExportManifest(**raw)


def _resolve_length_limit(tokenizer, model, max_length) -> int:
    if max_length is not None:
        return int(max_length)
    limit = getattr(tokenizer, "model_max_length", None)
    if limit is not None and limit <= _SANE_LENGTH_CAP:
        return int(limit)
    return int(model.config.max_position_embeddings)


def export_embeddings(dataset_path, encoder_id: str, out_path,
                      max_length: int | None = None) -> ExportManifest:
    """Embed every unique dataset utterance with a frozen encoder.

    Texts run through the encoder's own tokenizer (special tokens included)
    one at a time; the final hidden states are mean-pooled over all
    positions.  Utterances past the length limit are truncated and noted in
    the manifest.  Output is an EMB1 file plus a manifest JSON beside it.
    """
    import torch
    from transformers import AutoModel, AutoTokenizer
    from transformers.utils import logging as hf_logging

    hf_logging.disable_progress_bar()
    texts = unique_utterances(dataset_path)
    try:
        tokenizer = AutoTokenizer.from_pretrained(encoder_id)
        model = AutoModel.from_pretrained(encoder_id)
    except Exception as exc:
        raise EncoderUnavailableError(f"cannot load encoder {encoder_id!r}: {exc}") from exc
    model.eval()
    # batch of one and a single thread keep reruns byte-identical
    torch.set_num_threads(1)
    limit = _resolve_length_limit(tokenizer, model, max_length)

    records: list[tuple[str, np.ndarray]] = []
    warnings: list[str] = []
    dim = int(model.config.hidden_size)
    with torch.no_grad():
        for text in texts:
            full_len = len(tokenizer(text)["input_ids"])
            encoded = tokenizer(text, truncation=True, max_length=limit,
                                return_tensors="pt")
            if full_len > limit:
                warnings.append(f"truncated from {full_len} to {limit} tokens: {text[:60]!r}")
            hidden = model(**encoded).last_hidden_state
            vector = hidden.mean(dim=1).squeeze(0).numpy().astype(np.float32)
            if not np.all(np.isfinite(vector)):
                raise EncoderUnavailableError(f"non-finite embedding for {text[:60]!r}")
            records.append((text, vector))

    write_embeddings(out_path, records, dim)
    digest = hashlib.sha256(Path(out_path).read_bytes()).hexdigest()
    manifest = ExportManifest(
        encoder_id=encoder_id, pooling="mean", dim=dim,
        dataset=Path(dataset_path).name, records=len(records),
        sha256=digest, warnings=warnings,
    )
    manifest_path_for(out_path).write_text(
        json.dumps(manifest.to_json_dict(), indent=2) + "\n", encoding="utf-8")
    return manifest


@dataclass
class VerifyReport:
    format_ok: bool
    dim_ok: bool
    coverage_ok: bool
    dim: int | None = None
    manifest_dim: int | None = None
    records: int = 0
    total_utterances: int = 0
    missing: list[str] = field(default_factory=list)
    format_error: str | None = None

    @property
    def ok(self) -> bool:
        return self.format_ok and self.dim_ok and self.coverage_ok

    def to_json_dict(self) -> dict:
        return {
            "ok": self.ok, "format_ok": self.format_ok, "dim_ok": self.dim_ok,
            "coverage_ok": self.coverage_ok, "dim": self.dim,
            "manifest_dim": self.manifest_dim, "records": self.records,
            "total_utterances": self.total_utterances,
            "missing": self.missing[:10], "missing_count": len(self.missing),
            "format_error": self.format_error,
        }


def verify_export(emb_path, dataset_path) -> VerifyReport:
    """Check format validity, dimension consistency, and utterance coverage.

    Failures land in the report; nothing raises except unreadable dataset
    files, which are a caller error.
    """
    texts = unique_utterances(dataset_path)
    try:
        dim, records = read_embeddings(emb_path)
    except (Emb1FormatError, OSError) as exc:
        return VerifyReport(format_ok=False, dim_ok=False, coverage_ok=False,
                            total_utterances=len(texts), format_error=str(exc))

    manifest_dim = None
    manifest_file = manifest_path_for(emb_path)
    if manifest_file.is_file():
        manifest_dim = load_manifest(manifest_file).dim
    dim_ok = manifest_dim is None or manifest_dim == dim

    keys = {text for text, _ in records}
    missing = [text for text in texts if text not in keys]
    return VerifyReport(
        format_ok=True, dim_ok=dim_ok, coverage_ok=not missing,
        dim=dim, manifest_dim=manifest_dim, records=len(records),
        total_utterances=len(texts), missing=missing,
    )
