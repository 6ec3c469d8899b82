"""Dataset loading, label spaces, count validation, and synthetic fixtures.

The on-disk dataset is a JSON object with keys ``train``, ``val``, ``test``,
``oos_train``, ``oos_val``, ``oos_test``, each a list of
``[utterance, intent-name]`` pairs.  The companion domain map is a JSON
object mapping each domain name to its list of intent names.  The ``oos_*``
splits merge into the main splits with both labels set to ``"oos"``, which
is a genuine class in both heads.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

OOS_LABEL = "oos"

_VARIANT_BY_STEM = {
    "data_full": "full",
    "data_small": "small",
    "data_imbalanced": "imbalanced",
    "data_oos_plus": "oos+",
}

_SPLIT_KEYS = ("train", "val", "test")


class DataFormatError(ValueError):
    """A dataset or domain-map file violates the expected schema."""


@dataclass(frozen=True)
class LabeledExample:
    text: str
    domain: int
    intent: int


@dataclass
class LabelSpace:
    """Ordered domain and intent names (both including "oos") plus the intent->domain map."""

    domains: list[str]
    intents: list[str]
    intent_to_domain: dict[str, str]
    domain_index: dict[str, int] = field(init=False)
    intent_index: dict[str, int] = field(init=False)
    intent_domain_index: list[int] = field(init=False)

    def __post_init__(self):
        if OOS_LABEL not in self.domains or OOS_LABEL not in self.intents:
            raise DataFormatError("label space must include the 'oos' class in both heads")
        if self.intent_to_domain.get(OOS_LABEL) != OOS_LABEL:
            raise DataFormatError("'oos' intent must map to the 'oos' domain")
        for intent in self.intents:
            if intent not in self.intent_to_domain:
                raise DataFormatError(f"intent {intent!r} has no domain mapping")
            if self.intent_to_domain[intent] not in self.domains:
                raise DataFormatError(f"intent {intent!r} maps to unknown domain")
        self.domain_index = {name: i for i, name in enumerate(self.domains)}
        self.intent_index = {name: i for i, name in enumerate(self.intents)}
        self.intent_domain_index = [
            self.domain_index[self.intent_to_domain[name]] for name in self.intents
        ]

    @property
    def n_domains(self) -> int:
        return len(self.domains)

    @property
    def n_intents(self) -> int:
        return len(self.intents)

    def to_json_dict(self) -> dict:
        return {
            "domains": self.domains,
            "intents": self.intents,
            "intent_to_domain": self.intent_to_domain,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "LabelSpace":
        return cls(
            domains=list(obj["domains"]),
            intents=list(obj["intents"]),
            intent_to_domain=dict(obj["intent_to_domain"]),
        )


@dataclass
class Dataset:
    train: list[LabeledExample]
    valid: list[LabeledExample]
    test: list[LabeledExample]
    variant: str = "custom"

    def split(self, name: str) -> list[LabeledExample]:
        try:
            return {"train": self.train, "valid": self.valid, "test": self.test}[name]
        except KeyError:
            raise KeyError(f"unknown split {name!r}; expected train/valid/test") from None


def _load_domain_map(path) -> dict[str, list[str]]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict) or not raw:
        raise DataFormatError("domain map must be a non-empty JSON object")
    seen: dict[str, str] = {}
    for domain, intents in raw.items():
        if not isinstance(intents, list) or not all(isinstance(i, str) for i in intents):
            raise DataFormatError(f"domain {domain!r} must map to a list of intent names")
        for intent in intents:
            if intent in seen:
                raise DataFormatError(
                    f"intent {intent!r} appears under both {seen[intent]!r} and {domain!r}"
                )
            seen[intent] = domain
    return raw


def build_label_space(domain_map: dict[str, list[str]]) -> LabelSpace:
    """Lexicographically ordered label space with "oos" added to both heads."""
    if OOS_LABEL in domain_map:
        raise DataFormatError("domain map must not define 'oos'; it is added implicitly")
    intent_to_domain = {OOS_LABEL: OOS_LABEL}
    for domain, intents in domain_map.items():
        for intent in intents:
            if intent == OOS_LABEL:
                raise DataFormatError("domain map must not list 'oos' as an intent")
            intent_to_domain[intent] = domain
    domains = sorted(set(domain_map) | {OOS_LABEL})
    intents = sorted(intent_to_domain)
    return LabelSpace(domains=domains, intents=intents, intent_to_domain=intent_to_domain)


def _parse_pairs(raw: dict, key: str) -> list[tuple[str, str]]:
    if key not in raw:
        raise DataFormatError(f"dataset is missing required key {key!r}")
    pairs = raw[key]
    if not isinstance(pairs, list):
        raise DataFormatError(f"dataset key {key!r} must hold a list")
    out = []
    for i, pair in enumerate(pairs):
        if (not isinstance(pair, list) or len(pair) != 2
                or not isinstance(pair[0], str) or not isinstance(pair[1], str)):
            raise DataFormatError(f"malformed pair at {key}[{i}]: expected [utterance, intent]")
        out.append((pair[0], pair[1]))
    return out


def load_oos_dataset(data_path, domain_map_path, variant: str | None = None) -> tuple[Dataset, LabelSpace]:
    """Load a dataset JSON plus domain map; oos_* splits merge in as the "oos" class."""
    domain_map = _load_domain_map(domain_map_path)
    labels = build_label_space(domain_map)
    with open(data_path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise DataFormatError("dataset file must hold a JSON object")

    oos_domain = labels.domain_index[OOS_LABEL]
    oos_intent = labels.intent_index[OOS_LABEL]
    splits: dict[str, list[LabeledExample]] = {}
    for key in _SPLIT_KEYS:
        examples = []
        for text, intent_name in _parse_pairs(raw, key):
            if intent_name not in labels.intent_index or intent_name == OOS_LABEL:
                raise DataFormatError(
                    f"intent {intent_name!r} in split {key!r} is absent from the domain map"
                )
            intent = labels.intent_index[intent_name]
            examples.append(LabeledExample(text, labels.intent_domain_index[intent], intent))
        for text, _ in _parse_pairs(raw, f"oos_{key}"):
            examples.append(LabeledExample(text, oos_domain, oos_intent))
        splits[key] = examples

    if variant is None:
        stem = str(data_path).rsplit("/", 1)[-1]
        stem = stem[:-5] if stem.endswith(".json") else stem
        variant = _VARIANT_BY_STEM.get(stem, "custom")
    dataset = Dataset(train=splits["train"], valid=splits["val"], test=splits["test"], variant=variant)
    return dataset, labels


def write_dataset_json(dataset: Dataset, labels: LabelSpace, path) -> None:
    """Serialize back to the dataset JSON schema (inverse of the loader)."""
    raw: dict[str, list[list[str]]] = {}
    for key, split in (("train", dataset.train), ("val", dataset.valid), ("test", dataset.test)):
        in_scope, oos = [], []
        for ex in split:
            name = labels.intents[ex.intent]
            (oos if name == OOS_LABEL else in_scope).append([ex.text, name])
        raw[key] = in_scope
        raw[f"oos_{key}"] = oos
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(raw, fh, ensure_ascii=False, indent=1)


def write_domain_map(labels: LabelSpace, path) -> None:
    """Serialize the in-scope intent grouping as a domain-map JSON file."""
    grouped: dict[str, list[str]] = {d: [] for d in labels.domains if d != OOS_LABEL}
    for intent in labels.intents:
        if intent != OOS_LABEL:
            grouped[labels.intent_to_domain[intent]].append(intent)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(grouped, fh, ensure_ascii=False, indent=1)


@dataclass
class CountReport:
    ok: bool
    mismatches: list[str]
    observed: dict


def _split_counts(split: list[LabeledExample], labels: LabelSpace) -> dict:
    per_intent: dict[str, int] = {}
    oos = 0
    for ex in split:
        name = labels.intents[ex.intent]
        if name == OOS_LABEL:
            oos += 1
        else:
            per_intent[name] = per_intent.get(name, 0) + 1
    return {"total": len(split), "oos": oos, "per_intent": per_intent}


def validate_counts(dataset: Dataset, labels: LabelSpace, expected: dict) -> CountReport:
    """Compare split totals, oos counts, and per-intent counts against expectations.

    ``expected["splits"]`` maps split name to ``{"total", "oos", "per_intent"}``
    where ``per_intent`` is either one exact integer for every in-scope intent
    or a list of allowed values.
    """
    mismatches: list[str] = []
    observed: dict = {}
    for split_name, want in expected.get("splits", {}).items():
        got = _split_counts(dataset.split(split_name), labels)
        observed[split_name] = {"total": got["total"], "oos": got["oos"]}
        if "total" in want and got["total"] != want["total"]:
            mismatches.append(f"{split_name}: total {got['total']} != expected {want['total']}")
        if "oos" in want and got["oos"] != want["oos"]:
            mismatches.append(f"{split_name}: oos {got['oos']} != expected {want['oos']}")
        if "per_intent" in want:
            allowed = want["per_intent"]
            allowed_set = set(allowed) if isinstance(allowed, list) else {allowed}
            for intent in labels.intents:
                if intent == OOS_LABEL:
                    continue
                n = got["per_intent"].get(intent, 0)
                if n not in allowed_set:
                    mismatches.append(
                        f"{split_name}: intent {intent!r} has {n} examples, allowed {sorted(allowed_set)}"
                    )
    return CountReport(ok=not mismatches, mismatches=mismatches, observed=observed)


_FILLERS = ("please", "can", "you", "help", "me", "with", "this", "now")


def synth_dataset(seed: int, n_domains: int, intents_per_domain: int,
                  examples_per_intent: int, oos_examples: int,
                  valid_per_intent: int | None = None, test_per_intent: int | None = None,
                  valid_oos: int | None = None, test_oos: int | None = None,
                  ) -> tuple[Dataset, LabelSpace]:
    """Deterministic linearly-separable fixture.

    Every utterance carries its domain keyword ``d<i>`` and intent keyword
    ``w<k>`` plus random filler words shared across all classes, so a
    unigram model can separate the intents.  Out-of-scope utterances use a
    disjoint keyword pool.  ``examples_per_intent``/``oos_examples`` size
    the train split; validation and test sizes default to a quarter of the
    in-scope count, with the full oos count held out for test.
    """
    if min(n_domains, intents_per_domain, examples_per_intent, oos_examples) < 1:
        raise ValueError("all synthetic dataset counts must be >= 1")
    valid_per_intent = max(1, examples_per_intent // 4) if valid_per_intent is None else valid_per_intent
    test_per_intent = max(1, examples_per_intent // 4) if test_per_intent is None else test_per_intent
    valid_oos = max(1, oos_examples // 2) if valid_oos is None else valid_oos
    test_oos = oos_examples if test_oos is None else test_oos

    domain_map = {
        f"dom{i:02d}": [f"int{i * intents_per_domain + j:03d}" for j in range(intents_per_domain)]
        for i in range(n_domains)
    }
    labels = build_label_space(domain_map)
    rng = random.Random(seed)
    oos_pool = [f"z{r:02d}" for r in range(max(4, oos_examples // 4))]

    def fillers() -> list[str]:
        return [rng.choice(_FILLERS) for _ in range(rng.randint(1, 3))]

    def in_scope(count: int) -> list[LabeledExample]:
        out = []
        for i in range(n_domains):
            for j in range(intents_per_domain):
                k = i * intents_per_domain + j
                intent = labels.intent_index[f"int{k:03d}"]
                domain = labels.intent_domain_index[intent]
                for _ in range(count):
                    text = " ".join([f"d{i:02d}", f"w{k:03d}"] + fillers())
                    out.append(LabeledExample(text, domain, intent))
        return out

    def oos(count: int) -> list[LabeledExample]:
        d = labels.domain_index[OOS_LABEL]
        t = labels.intent_index[OOS_LABEL]
        return [
            LabeledExample(" ".join([rng.choice(oos_pool)] + fillers()), d, t)
            for _ in range(count)
        ]

    dataset = Dataset(
        train=in_scope(examples_per_intent) + oos(oos_examples),
        valid=in_scope(valid_per_intent) + oos(valid_oos),
        test=in_scope(test_per_intent) + oos(test_oos),
        variant="synthetic",
    )
    return dataset, labels
