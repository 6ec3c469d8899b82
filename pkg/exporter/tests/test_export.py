import hashlib
import json

import numpy as np
import pytest

from embexport.emb1 import read_embeddings
from embexport.export import (
    DatasetFormatError,
    EncoderUnavailableError,
    export_embeddings,
    load_manifest,
    manifest_path_for,
    unique_utterances,
)


def test_unique_utterances_order_and_dedupe(dataset_file):
    texts = unique_utterances(dataset_file)
    assert texts == ["pay my bill", "check the balance", "book a flight",
                     "cancel my order", "zz qq", "qq xx", "zz xx qq"]


def test_unique_utterances_missing_key(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"train": []}))
    with pytest.raises(DatasetFormatError, match="oos_test"):
        unique_utterances(path)


def test_unique_utterances_malformed_pair(tmp_path):
    payload = {k: [] for k in ("train", "val", "test", "oos_train", "oos_val", "oos_test")}
    payload["val"] = [["text only"]]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(payload))
    with pytest.raises(DatasetFormatError, match=r"val\[0\]"):
        unique_utterances(path)


def test_unique_utterances_rejects_non_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("not json {")
    with pytest.raises(DatasetFormatError, match="JSON"):
        unique_utterances(path)


def test_export_happy_path(tiny_encoder_dir, dataset_file, tmp_path):
    out = tmp_path / "vectors.emb1"
    manifest = export_embeddings(dataset_file, tiny_encoder_dir, out)

    assert manifest.records == 7  # duplicates collapse to one record
    assert manifest.pooling == "mean"
    assert manifest.dim == 16
    assert manifest.warnings == []
    assert manifest.sha256 == hashlib.sha256(out.read_bytes()).hexdigest()

    dim, records = read_embeddings(out)
    assert dim == 16
    assert len(records) == 7
    assert [t for t, _ in records] == unique_utterances(dataset_file)
    for text, vector in records:
        assert np.all(np.isfinite(vector))
        assert np.any(vector != 0.0), text

    saved = load_manifest(manifest_path_for(out))
    assert saved == manifest


def test_export_truncates_long_utterance_with_warning(tiny_encoder_dir, tmp_path):
    long_text = "pay " * 40
    payload = {k: [] for k in ("val", "test", "oos_train", "oos_val", "oos_test")}
    payload["train"] = [[long_text.strip(), "pay_bill"], ["check the balance", "balance"]]
    data = tmp_path / "data.json"
    data.write_text(json.dumps(payload))

    out = tmp_path / "vectors.emb1"
    manifest = export_embeddings(data, tiny_encoder_dir, out)
    assert len(manifest.warnings) == 1
    assert "truncated" in manifest.warnings[0]
    _, records = read_embeddings(out)
    assert len(records) == 2


def test_export_is_deterministic(tiny_encoder_dir, dataset_file, tmp_path):
    out_a, out_b = tmp_path / "a.emb1", tmp_path / "b.emb1"
    export_embeddings(dataset_file, tiny_encoder_dir, out_a)
    export_embeddings(dataset_file, tiny_encoder_dir, out_b)
    assert out_a.read_bytes() == out_b.read_bytes()


def test_export_unknown_encoder_raises(dataset_file, tmp_path):
    with pytest.raises(EncoderUnavailableError):
        export_embeddings(dataset_file, str(tmp_path / "no_such_model"),
                          tmp_path / "x.emb1")
