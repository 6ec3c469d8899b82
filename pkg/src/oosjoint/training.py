"""Training loop for the joint classifier.

Loss is a convex mix of the two cross-entropies, L = lam*L_d + (1-lam)*L_t,
where lam = sigmoid(lambda_raw) is itself trained.  Optimization is AdamW
with linear warmup then linear decay to zero.  Early stopping watches
validation intent accuracy (computed by plain argmax, no threshold) and
restores the best epoch's parameters.

The hash-encoder table can be large (default 2^18 x 256), so its optimizer
state is kept per touched row with a per-row step count; dense parameters
use ordinary whole-tensor Adam state.

All randomness flows from one numpy Generator seeded by the config: first
the parameter init draws, then the encoder table, then one permutation per
epoch.  Identical (seed, config, data) reruns are bitwise identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, LabeledExample, LabelSpace
from .diffcore import (
    Array,
    DimensionError,
    EmptySequenceError,
    LabelError,
    Node,
    NumericInstabilityError,
    add,
    affine,
    backward,
    mean_pool,
    mul,
    sigmoid,
    softmax_xent,
    take_row,
)
from .encoder import CoverageError, EmbeddingStore, HashEncoder, missing_texts, ngram_ids, tokenize
from .model import (
    EXTERNAL_ENCODER,
    ForwardOutput,
    JointModel,
    StructureTag,
    forward,
    init_model,
    single_head_baseline,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

DEFAULT_LR_BUILTIN = 1e-3
DEFAULT_LR_EXTERNAL = 4e-5

# Decay applies to weight matrices and encoder table rows only, never to
# biases, layer-norm parameters, or the mixing weight.
_DECAY_PARAMS = frozenset({"W_d", "W_t", "head_d_W", "head_t_W"})


@dataclass
class TrainConfig:
    """Everything the trainer needs besides the data itself.

    ``mode`` selects the utterance encoder: "builtin" trains the hashed
    n-gram table, "external" reads frozen vectors from an EMB1 store.  The
    learning rate defaults to 1e-3 for builtin and 4e-5 for external when
    left unset.
    """

    structure: StructureTag = StructureTag.HIER_DOMAIN_FIRST
    model_kind: str = "joint"
    mode: str = "builtin"
    dim: int = 256
    buckets: int = 1 << 18
    ngram_orders: tuple[int, ...] = (1, 2)
    learning_rate: float | None = None
    warmup_proportion: float = 0.1
    max_epochs: int = 10
    early_stop_patience: int = 3
    batch_size: int = 32
    weight_decay: float = 0.01
    seed: int = 42

    def resolved_learning_rate(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return DEFAULT_LR_BUILTIN if self.mode == "builtin" else DEFAULT_LR_EXTERNAL

    def validate(self) -> None:
        if self.model_kind not in ("joint", "baseline"):
            raise ValueError(f"model_kind must be 'joint' or 'baseline', got {self.model_kind!r}")
        if self.mode not in ("builtin", "external"):
            raise ValueError(f"mode must be 'builtin' or 'external', got {self.mode!r}")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.warmup_proportion < 1.0:
            raise ValueError("warmup_proportion must lie in [0, 1)")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be positive")
        if self.early_stop_patience < 0:
            raise ValueError("early_stop_patience must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in u64")
        if self.mode == "builtin":
            if self.buckets < 2 or self.buckets & (self.buckets - 1):
                raise ValueError("buckets must be a power of two >= 2")
            if not self.ngram_orders or any(k < 1 for k in self.ngram_orders):
                raise ValueError("ngram_orders must be positive integers")

    def to_json_dict(self) -> dict:
        return {
            "structure": self.structure.value,
            "model_kind": self.model_kind,
            "mode": self.mode,
            "dim": self.dim,
            "buckets": self.buckets,
            "ngram_orders": list(self.ngram_orders),
            "learning_rate": self.resolved_learning_rate(),
            "warmup_proportion": self.warmup_proportion,
            "max_epochs": self.max_epochs,
            "early_stop_patience": self.early_stop_patience,
            "batch_size": self.batch_size,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
        }


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    lambda_value: float | None
    valid_intent_accuracy: float
    valid_domain_accuracy: float | None


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    stopped_reason: str = ""
    best_epoch: int = 0
    best_valid_intent_accuracy: float = 0.0


def lambda_value(lambda_raw: float) -> float:
    """Mixing weight lam = sigmoid(lambda_raw); always strictly inside (0, 1)."""
    x = float(lambda_raw)
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def joint_loss(out: ForwardOutput, y_domain: int, y_intent: int, lambda_raw: Node) -> Node:
    """lam * xent(domain) + (1 - lam) * xent(intent), differentiable in lambda_raw."""
    loss_d, _ = softmax_xent(out.logits_domain, y_domain)
    loss_t, _ = softmax_xent(out.logits_intent, y_intent)
    lam = sigmoid(lambda_raw)
    return add(mul(lam, loss_d), mul(affine(lam, -1.0, 1.0), loss_t))


@dataclass
class AdamState:
    m: Array
    v: Array

    @classmethod
    def like(cls, value: Array) -> "AdamState":
        return cls(m=np.zeros_like(value), v=np.zeros_like(value))


def adamw_step(param: Array, grad: Array, state: AdamState, t: int, lr_t: float,
               weight_decay: float) -> None:
    """One in-place AdamW update (beta1=0.9, beta2=0.999, eps=1e-8).

    Decay is decoupled: it subtracts lr_t * wd * param alongside the Adam
    direction instead of being folded into the gradient.
    """
    if t < 1:
        raise ValueError("adamw_step: step count must be >= 1")
    if param.shape != grad.shape:
        raise DimensionError(f"adamw_step: param {param.shape} vs grad {grad.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericInstabilityError("adamw_step: non-finite gradient")
    state.m *= ADAM_BETA1
    state.m += (1.0 - ADAM_BETA1) * grad
    state.v *= ADAM_BETA2
    state.v += (1.0 - ADAM_BETA2) * grad * grad
    m_hat = state.m / (1.0 - ADAM_BETA1 ** t)
    v_hat = state.v / (1.0 - ADAM_BETA2 ** t)
    param -= lr_t * (m_hat / (np.sqrt(v_hat) + ADAM_EPS) + weight_decay * param)


def lr_schedule(step: int, total_steps: int, base_lr: float, warmup_proportion: float) -> float:
    """Linear 0 -> base_lr over ceil(wp * total) steps, then linear decay to 0."""
    if total_steps <= 0:
        raise ValueError("lr_schedule: total_steps must be positive")
    if not 1 <= step <= total_steps:
        raise ValueError(f"lr_schedule: step {step} outside [1, {total_steps}]")
    warmup = math.ceil(warmup_proportion * total_steps)
    if step <= warmup:
        return base_lr * step / warmup
    return base_lr * (total_steps - step) / (total_steps - warmup)


def _check_labels(split_name: str, examples: list[LabeledExample], labels: LabelSpace) -> None:
    for ex in examples:
        if not 0 <= ex.domain < labels.n_domains or not 0 <= ex.intent < labels.n_intents:
            raise LabelError(
                f"{split_name} example {ex.text!r} has labels ({ex.domain}, {ex.intent}) "
                f"outside the label space ({labels.n_domains} domains, {labels.n_intents} intents)"
            )


def _example_losses(batch: list[LabeledExample], hbars: list[Node], model: JointModel) -> Node:
    losses = []
    for ex, hbar in zip(batch, hbars):
        if model.kind == "joint":
            out = forward(hbar, model)
            losses.append(joint_loss(out, ex.domain, ex.intent, model.lambda_raw))
        else:
            logits, _ = single_head_baseline(hbar, model)
            loss, _ = softmax_xent(logits, ex.intent)
            losses.append(loss)
    return mean_pool(losses)


def _split_accuracies(examples: list[LabeledExample], hbar_values: list[Array],
                      model: JointModel) -> tuple[float, float | None]:
    """Plain-argmax intent and domain accuracy; domain is None for the baseline."""
    intent_hits = 0
    domain_hits = 0
    for ex, value in zip(examples, hbar_values):
        hbar = Node(value)
        if model.kind == "joint":
            out = forward(hbar, model)
            intent_hits += int(np.argmax(out.p_intent)) == ex.intent
            domain_hits += int(np.argmax(out.p_domain)) == ex.domain
        else:
            _, p_intent = single_head_baseline(hbar, model)
            intent_hits += int(np.argmax(p_intent)) == ex.intent
    n = len(examples)
    if model.kind == "joint":
        return intent_hits / n, domain_hits / n
    return intent_hits / n, None


class _BuiltinBatcher:
    """Caches n-gram ids per example and rebuilds fresh graph nodes per use."""

    def __init__(self, encoder: HashEncoder, examples: list[LabeledExample]):
        self.encoder = encoder
        self.ids = [ngram_ids(tokenize(ex.text), encoder) for ex in examples]

    def hbar(self, index: int) -> tuple[Node, list[int]]:
        ids = self.ids[index]
        rows = [take_row(self.encoder.table, i) for i in ids]
        return mean_pool(rows), ids

    def value(self, index: int) -> Array:
        return self.encoder.table.value[self.ids[index]].mean(axis=0)


def _sparse_table_update(table: Node, touched: set[int], row_m: dict[int, Array],
                         row_v: dict[int, Array], row_t: dict[int, int],
                         lr_t: float, weight_decay: float) -> None:
    if table.grad is None:
        return
    for row in sorted(touched):
        grad = table.grad[row]
        if row not in row_m:
            row_m[row] = np.zeros_like(grad)
            row_v[row] = np.zeros_like(grad)
            row_t[row] = 0
        row_t[row] += 1
        state = AdamState(m=row_m[row], v=row_v[row])
        adamw_step(table.value[row], grad, state, row_t[row], lr_t, weight_decay)


def train(dataset: Dataset, labels: LabelSpace, config: TrainConfig,
          store: EmbeddingStore | None = None) -> tuple[JointModel, TrainHistory]:
    """Fit a model on dataset.train, early-stopping on dataset.valid.

    Returns the parameters of the epoch with the best validation intent
    accuracy (ties keep the earlier epoch), plus the per-epoch history.
    """
    config.validate()
    if not dataset.train:
        raise EmptySequenceError("train split is empty")
    if not dataset.valid:
        raise EmptySequenceError("validation split is empty")
    _check_labels("train", dataset.train, labels)
    _check_labels("valid", dataset.valid, labels)

    rng = np.random.default_rng(config.seed)
    model = init_model(config.dim, labels.n_domains, labels.n_intents, config.structure,
                       rng, encoder=EXTERNAL_ENCODER, kind=config.model_kind)

    if config.mode == "builtin":
        model.encoder = HashEncoder.create(config.buckets, config.dim, rng, config.ngram_orders)
        train_feats = _BuiltinBatcher(model.encoder, dataset.train)
        valid_feats = _BuiltinBatcher(model.encoder, dataset.valid)
    else:
        if store is None:
            raise ValueError("external mode requires an embedding store")
        if store.dim != config.dim:
            raise DimensionError(f"store dimension {store.dim} != configured dim {config.dim}")
        missing = missing_texts(store, [ex.text for ex in dataset.train + dataset.valid])
        if missing:
            raise CoverageError(missing)
        train_vecs = [store.vectors[ex.text] for ex in dataset.train]
        valid_vecs = [store.vectors[ex.text] for ex in dataset.valid]

    dense_states = {
        name: AdamState.like(node.value)
        for name, node in model.param_items() if name != "encoder_table"
    }
    row_m: dict[int, Array] = {}
    row_v: dict[int, Array] = {}
    row_t: dict[int, int] = {}

    n_train = len(dataset.train)
    n_batches = math.ceil(n_train / config.batch_size)
    total_steps = n_batches * config.max_epochs
    base_lr = config.resolved_learning_rate()

    history = TrainHistory()
    best_acc = -math.inf
    best_snap: dict[str, Array] | None = None
    bad_epochs = 0
    step = 0

    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n_train)
        loss_sum = 0.0
        for b in range(n_batches):
            indices = perm[b * config.batch_size:(b + 1) * config.batch_size]
            batch = [dataset.train[i] for i in indices]
            touched: set[int] = set()
            hbars: list[Node] = []
            for i in indices:
                if config.mode == "builtin":
                    hbar, ids = train_feats.hbar(i)
                    touched.update(ids)
                else:
                    hbar = Node(train_vecs[i])
                hbars.append(hbar)

            model.zero_grad()
            batch_loss = _example_losses(batch, hbars, model)
            backward(batch_loss)
            loss_sum += float(batch_loss.value) * len(batch)

            step += 1
            lr_t = lr_schedule(step, total_steps, base_lr, config.warmup_proportion)
            for name, node in model.param_items():
                if name == "encoder_table" or node.grad is None:
                    continue
                wd = config.weight_decay if name in _DECAY_PARAMS else 0.0
                adamw_step(node.value, node.grad, dense_states[name], step, lr_t, wd)
            if config.mode == "builtin":
                _sparse_table_update(model.encoder.table, touched, row_m, row_v, row_t,
                                     lr_t, config.weight_decay)

        if config.mode == "builtin":
            valid_values = [valid_feats.value(i) for i in range(len(dataset.valid))]
        else:
            valid_values = valid_vecs
        intent_acc, domain_acc = _split_accuracies(dataset.valid, valid_values, model)
        history.records.append(EpochRecord(
            epoch=epoch,
            train_loss=loss_sum / n_train,
            lambda_value=lambda_value(float(model.lambda_raw.value)) if model.kind == "joint" else None,
            valid_intent_accuracy=intent_acc,
            valid_domain_accuracy=domain_acc,
        ))

        if intent_acc > best_acc:
            best_acc = intent_acc
            best_snap = model.snapshot()
            history.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
        if bad_epochs >= config.early_stop_patience:
            history.stopped_reason = "early_stop"
            break
    else:
        history.stopped_reason = "max_epochs"

    assert best_snap is not None
    model.restore(best_snap)
    history.best_valid_intent_accuracy = best_acc
    return model, history
