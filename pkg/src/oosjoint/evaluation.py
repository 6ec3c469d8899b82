"""Threshold post-processing, metrics, sweeps, and representation export.

Prediction is argmax over the intent distribution, overridden to "oos"
whenever the winning probability falls below tau.  Metrics: accuracy over
all examples, accuracy over in-scope examples, and precision/recall/F1
with oos as the positive class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import OOS_LABEL, LabeledExample, LabelSpace
from .diffcore import Array, DimensionError, Node
from .encoder import EmbeddingStore, HashEncoder, encode, lookup, tokenize
from .model import JointModel, forward, single_head_baseline

HbarFn = Callable[[str], Node]


@dataclass
class ThresholdConfig:
    """tau in [0, 1]; the domain override is off unless explicitly enabled."""

    tau: float = 0.0
    apply_to_domain: bool = False

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")


@dataclass
class MetricCounts:
    tp: int
    fp: int
    fn: int
    tn: int
    in_correct: int
    in_total: int


@dataclass
class EvalReport:
    accuracy_all: float
    accuracy_in: float
    oos_precision: float
    oos_recall: float
    oos_f1: float
    counts: MetricCounts

    def to_json_dict(self) -> dict:
        return {
            "accuracy_all": self.accuracy_all,
            "accuracy_in": self.accuracy_in,
            "oos_precision": self.oos_precision,
            "oos_recall": self.oos_recall,
            "oos_f1": self.oos_f1,
            "counts": {
                "tp": self.counts.tp, "fp": self.counts.fp,
                "fn": self.counts.fn, "tn": self.counts.tn,
                "in_correct": self.counts.in_correct, "in_total": self.counts.in_total,
            },
        }


@dataclass
class Prediction:
    """Labels after thresholding; domain fields are None for baseline models."""

    domain: str | None
    intent: str
    p_domain: Array | None
    p_intent: Array


def make_hbar_fn(model: JointModel, store: EmbeddingStore | None = None) -> HbarFn:
    """Pooled-vector builder for a model: its own hash encoder, or an EMB1 store."""
    if isinstance(model.encoder, HashEncoder):
        enc = model.encoder
        return lambda text: encode(tokenize(text), enc)
    if store is None:
        raise ValueError("model uses external embeddings; an embedding store is required")
    if store.dim != model.dim:
        raise DimensionError(f"store dimension {store.dim} != model dimension {model.dim}")
    return lambda text: lookup(store, text)


def distributions(model: JointModel, hbar: Node) -> tuple[Array | None, Array]:
    """(p_domain, p_intent) for one pooled vector; p_domain is None for baselines."""
    if model.kind == "joint":
        out = forward(hbar, model)
        return out.p_domain, out.p_intent
    _, p_intent = single_head_baseline(hbar, model)
    return None, p_intent


def _apply_threshold(probs: Array, names: list[str], tau: float) -> str:
    top = int(np.argmax(probs))
    if probs[top] < tau:
        return OOS_LABEL
    return names[top]


def predict(model: JointModel, hbar: Node, labels: LabelSpace,
            threshold: ThresholdConfig) -> Prediction:
    """Threshold-aware labels for one utterance; argmax ties go to the lowest index."""
    p_domain, p_intent = distributions(model, hbar)
    intent = _apply_threshold(p_intent, labels.intents, threshold.tau)
    if p_domain is None:
        domain = None
    elif threshold.apply_to_domain:
        domain = _apply_threshold(p_domain, labels.domains, threshold.tau)
    else:
        domain = labels.domains[int(np.argmax(p_domain))]
    return Prediction(domain=domain, intent=intent, p_domain=p_domain, p_intent=p_intent)


def compute_metrics(preds: list[str], golds: list[str], oos_label: str = OOS_LABEL) -> EvalReport:
    """Count-based metrics; precision/recall/F1 are 0 when their denominator is 0."""
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions vs {len(golds)} golds")
    if not golds:
        raise ValueError("no examples to score")
    tp = fp = fn = tn = 0
    in_correct = in_total = 0
    all_correct = 0
    for p, g in zip(preds, golds):
        all_correct += p == g
        if g == oos_label:
            tp += p == oos_label
            fn += p != oos_label
        else:
            fp += p == oos_label
            tn += p != oos_label
            in_total += 1
            in_correct += p == g
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalReport(
        accuracy_all=all_correct / len(golds),
        accuracy_in=in_correct / in_total if in_total else 0.0,
        oos_precision=precision,
        oos_recall=recall,
        oos_f1=f1,
        counts=MetricCounts(tp=tp, fp=fp, fn=fn, tn=tn,
                            in_correct=in_correct, in_total=in_total),
    )


def _intent_probs(model: JointModel, examples: list[LabeledExample],
                  hbar_fn: HbarFn) -> list[Array]:
    return [distributions(model, hbar_fn(ex.text))[1] for ex in examples]


def _threshold_preds(probs: list[Array], labels: LabelSpace, tau: float) -> list[str]:
    return [_apply_threshold(p, labels.intents, tau) for p in probs]


def evaluate_split(model: JointModel, examples: list[LabeledExample], labels: LabelSpace,
                   threshold: ThresholdConfig, hbar_fn: HbarFn) -> EvalReport:
    """Intent-head metrics for one split at one threshold."""
    probs = _intent_probs(model, examples, hbar_fn)
    preds = _threshold_preds(probs, labels, threshold.tau)
    golds = [labels.intents[ex.intent] for ex in examples]
    return compute_metrics(preds, golds)


def threshold_sweep(model: JointModel, examples: list[LabeledExample], labels: LabelSpace,
                    grid: list[float], hbar_fn: HbarFn) -> list[tuple[float, EvalReport]]:
    """Evaluate every tau on one set of precomputed distributions.

    The grid must be strictly ascending inside [0, 1].
    """
    if not grid:
        raise ValueError("empty threshold grid")
    for tau in grid:
        if not 0.0 <= tau <= 1.0:
            raise ValueError(f"tau {tau} outside [0, 1]")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("threshold grid must be strictly ascending")
    probs = _intent_probs(model, examples, hbar_fn)
    golds = [labels.intents[ex.intent] for ex in examples]
    return [
        (tau, compute_metrics(_threshold_preds(probs, labels, tau), golds))
        for tau in grid
    ]


def best_row(rows: list[tuple[float, EvalReport]]) -> tuple[float, EvalReport]:
    """Row with the highest F1; ties keep the smallest tau."""
    if not rows:
        raise ValueError("empty sweep")
    best = rows[0]
    for row in rows[1:]:
        if row[1].oos_f1 > best[1].oos_f1:
            best = row
    return best


def write_sweep_tsv(rows: list[tuple[float, EvalReport]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("tau\tacc_all\tacc_in\tP\tR\tF1\n")
        for tau, rep in rows:
            fh.write(f"{tau!r}\t{rep.accuracy_all!r}\t{rep.accuracy_in!r}"
                     f"\t{rep.oos_precision!r}\t{rep.oos_recall!r}\t{rep.oos_f1!r}\n")


def _clean(text: str) -> str:
    return text.replace("\t", " ").replace("\n", " ").replace("\r", " ")


def export_representations(model: JointModel, examples: list[LabeledExample],
                           labels: LabelSpace, path, hbar_fn: HbarFn) -> int:
    """One TSV row per example: text, gold labels, then the d and t vectors.

    Values print at 9 significant digits, enough to reconstruct them at
    single precision.  Returns the number of rows written.
    """
    if model.kind != "joint":
        raise ValueError("baseline models have no domain/intent representations to export")
    header = (["text", "domain", "intent"]
              + [f"d_{i}" for i in range(model.dim)]
              + [f"t_{i}" for i in range(model.dim)])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for ex in examples:
            out = forward(hbar_fn(ex.text), model)
            fields = [_clean(ex.text), labels.domains[ex.domain], labels.intents[ex.intent]]
            fields += [f"{v:.9g}" for v in out.d.value]
            fields += [f"{v:.9g}" for v in out.t.value]
            fh.write("\t".join(fields) + "\n")
    return len(examples)
