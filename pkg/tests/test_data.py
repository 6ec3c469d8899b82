"""Dataset loading, label spaces, count validation, synthetic fixture."""

from __future__ import annotations

import json

import pytest

from oosjoint import data


def write_json(path, obj):
    path.write_text(json.dumps(obj), encoding="utf-8")


@pytest.fixture
def tiny_files(tmp_path):
    """Minimal two-intent dataset plus its domain map."""
    data_path = tmp_path / "tiny.json"
    map_path = tmp_path / "map.json"
    write_json(data_path, {
        "train": [["pay my bill", "pay_bill"], ["check balance", "balance"]],
        "val": [["pay the bill now", "pay_bill"]],
        "test": [["balance please", "balance"]],
        "oos_train": [["weather today", "oos"]],
        "oos_val": [],
        "oos_test": [["tell me a joke", "oos"]],
    })
    write_json(map_path, {"banking": ["pay_bill", "balance"]})
    return data_path, map_path


def test_load_tiny_dataset(tiny_files):
    data_path, map_path = tiny_files
    dataset, labels = data.load_oos_dataset(data_path, map_path)
    assert labels.domains == ["banking", "oos"]
    assert labels.intents == ["balance", "oos", "pay_bill"]
    assert len(dataset.train) == 3
    assert len(dataset.valid) == 1
    assert len(dataset.test) == 2
    oos_examples = [ex for ex in dataset.test if labels.intents[ex.intent] == "oos"]
    assert len(oos_examples) == 1
    assert labels.domains[oos_examples[0].domain] == "oos"
    assert dataset.variant == "custom"


def test_minimal_single_intent_label_space(tmp_path):
    write_json(tmp_path / "one.json", {
        "train": [["x", "only"]], "val": [["x", "only"]], "test": [["x", "only"]],
        "oos_train": [], "oos_val": [], "oos_test": [["y", "oos"]],
    })
    write_json(tmp_path / "m.json", {"d": ["only"]})
    dataset, labels = data.load_oos_dataset(tmp_path / "one.json", tmp_path / "m.json")
    assert labels.n_domains == 2
    assert labels.n_intents == 2
    assert len(dataset.test) == 2


def test_missing_split_key_rejected(tmp_path):
    write_json(tmp_path / "bad.json", {"train": [], "val": [], "test": []})
    write_json(tmp_path / "m.json", {"d": ["a"]})
    with pytest.raises(data.DataFormatError, match="oos_train"):
        data.load_oos_dataset(tmp_path / "bad.json", tmp_path / "m.json")


def test_unknown_intent_rejected(tiny_files, tmp_path):
    data_path, _ = tiny_files
    write_json(tmp_path / "partial.json", {"banking": ["pay_bill"]})
    with pytest.raises(data.DataFormatError, match="balance"):
        data.load_oos_dataset(data_path, tmp_path / "partial.json")


def test_malformed_pair_rejected(tmp_path):
    write_json(tmp_path / "bad.json", {
        "train": [["text only"]], "val": [], "test": [],
        "oos_train": [], "oos_val": [], "oos_test": [],
    })
    write_json(tmp_path / "m.json", {"d": ["a"]})
    with pytest.raises(data.DataFormatError, match=r"train\[0\]"):
        data.load_oos_dataset(tmp_path / "bad.json", tmp_path / "m.json")


def test_oos_reserved_in_domain_map(tmp_path):
    write_json(tmp_path / "m.json", {"d": ["a", "oos"]})
    with pytest.raises(data.DataFormatError):
        data.build_label_space(data._load_domain_map(tmp_path / "m.json"))


def test_label_order_ignores_file_order(tmp_path):
    content = {
        "train": [["x", "zeta"], ["y", "alpha"]], "val": [["x", "zeta"]],
        "test": [["y", "alpha"]],
        "oos_train": [], "oos_val": [], "oos_test": [],
    }
    write_json(tmp_path / "a.json", content)
    write_json(tmp_path / "m1.json", {"dz": ["zeta"], "da": ["alpha"]})
    write_json(tmp_path / "m2.json", {"da": ["alpha"], "dz": ["zeta"]})
    _, l1 = data.load_oos_dataset(tmp_path / "a.json", tmp_path / "m1.json")
    _, l2 = data.load_oos_dataset(tmp_path / "a.json", tmp_path / "m2.json")
    assert l1.intents == l2.intents == ["alpha", "oos", "zeta"]
    assert l1.domains == l2.domains == ["da", "dz", "oos"]


def test_variant_inferred_from_stem(tmp_path):
    content = {
        "train": [["x", "a"]], "val": [["x", "a"]], "test": [["x", "a"]],
        "oos_train": [], "oos_val": [], "oos_test": [],
    }
    write_json(tmp_path / "data_small.json", content)
    write_json(tmp_path / "m.json", {"d": ["a"]})
    dataset, _ = data.load_oos_dataset(tmp_path / "data_small.json", tmp_path / "m.json")
    assert dataset.variant == "small"


def test_round_trip_serialization(tmp_path, synth_small):
    dataset, labels = synth_small
    data.write_dataset_json(dataset, labels, tmp_path / "rt.json")
    data.write_domain_map(labels, tmp_path / "rt_map.json")
    reloaded, labels2 = data.load_oos_dataset(tmp_path / "rt.json", tmp_path / "rt_map.json")
    assert labels2.domains == labels.domains
    assert labels2.intents == labels.intents
    assert labels2.intent_to_domain == labels.intent_to_domain
    for split in ("train", "valid", "test"):
        assert reloaded.split(split) == dataset.split(split)


def test_intent_domain_consistency_after_load(synth_small):
    dataset, labels = synth_small
    for split in ("train", "valid", "test"):
        for ex in dataset.split(split):
            intent_name = labels.intents[ex.intent]
            assert labels.domains[ex.domain] == labels.intent_to_domain[intent_name]


def test_validate_counts_pass_and_single_mismatch(synth_small):
    dataset, labels = synth_small
    expected = {"splits": {
        "train": {"total": 210, "oos": 30, "per_intent": 20},
        "valid": {"total": 60, "oos": 15, "per_intent": 5},
        "test": {"total": 75, "oos": 30, "per_intent": 5},
    }}
    report = data.validate_counts(dataset, labels, expected)
    assert report.ok
    assert report.mismatches == []

    expected["splits"]["train"]["total"] = 211
    report = data.validate_counts(dataset, labels, expected)
    assert not report.ok
    assert len(report.mismatches) == 1
    assert "211" in report.mismatches[0]


def test_validate_counts_allows_value_sets(synth_small):
    dataset, labels = synth_small
    expected = {"splits": {"train": {"per_intent": [10, 20, 30]}}}
    assert data.validate_counts(dataset, labels, expected).ok
    expected = {"splits": {"train": {"per_intent": [10, 30]}}}
    report = data.validate_counts(dataset, labels, expected)
    assert len(report.mismatches) == 9


def test_synth_dataset_counts():
    dataset, labels = data.synth_dataset(seed=0, n_domains=3, intents_per_domain=3,
                                         examples_per_intent=20, oos_examples=30)
    assert labels.n_domains == 4
    assert labels.n_intents == 10
    in_scope = [ex for ex in dataset.train if labels.intents[ex.intent] != "oos"]
    assert len(in_scope) == 180
    assert len(dataset.train) == 210
    assert all(labels.intents[ex.intent] == "oos" for ex in dataset.test[-30:])


def test_synth_dataset_deterministic():
    a = data.synth_dataset(seed=5, n_domains=2, intents_per_domain=2,
                           examples_per_intent=4, oos_examples=4)
    b = data.synth_dataset(seed=5, n_domains=2, intents_per_domain=2,
                           examples_per_intent=4, oos_examples=4)
    assert a[0].train == b[0].train
    assert a[0].test == b[0].test
    c = data.synth_dataset(seed=6, n_domains=2, intents_per_domain=2,
                           examples_per_intent=4, oos_examples=4)
    assert a[0].train != c[0].train


def test_synth_dataset_keywords_mark_classes():
    # sorted label order puts domNN/intNNN before "oos", so index == keyword number
    dataset, labels = data.synth_dataset(seed=1, n_domains=2, intents_per_domain=2,
                                         examples_per_intent=3, oos_examples=4)
    for ex in dataset.train:
        words = ex.text.split()
        if labels.intents[ex.intent] == "oos":
            assert words[0].startswith("z")
        else:
            assert words[0] == f"d{ex.domain:02d}"
            assert words[1] == f"w{ex.intent:03d}"


def test_packaged_clinc_map_is_complete():
    from importlib import resources
    raw = json.loads(resources.files("oosjoint").joinpath(
        "resources/clinc150_domains.json").read_text("utf-8"))
    assert len(raw) == 10
    intents = [i for v in raw.values() for i in v]
    assert len(intents) == 150
    assert len(set(intents)) == 150
    assert all(len(v) == 15 for v in raw.values())
    labels = data.build_label_space(raw)
    assert labels.n_domains == 11
    assert labels.n_intents == 151
