"""Shared fixtures and independent oracles.

The straight-line functions below recompute the model's forward pass with
plain numpy and no graph machinery, structured as literal transcriptions
of the defining equations.  Model and acceptance tests compare against
them rather than against the library's own code paths.
"""

from __future__ import annotations

import numpy as np
import pytest

from oosjoint.data import synth_dataset
from oosjoint.diffcore import Node
from oosjoint.model import EXTERNAL_ENCODER, JointModel, StructureTag
from oosjoint.training import TrainConfig, train

# ---------------------------------------------------------------- oracles


def oracle_softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def oracle_layer_norm(x, gamma, beta, eps=1e-5):
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return gamma * (x - mu) / np.sqrt(var + eps) + beta


def oracle_forward(hbar, p, structure):
    """Non-graph evaluation of the full forward pass.

    ``p`` is a dict of plain arrays named like JointModel's parameters.
    Returns s_d, d, s_t, t, p_domain, p_intent.
    """
    relu = lambda v: np.maximum(v, 0.0)
    if structure == "hier_domain_first":
        s_d = relu(p["W_d"] @ hbar + p["b_d"])
        d = oracle_layer_norm(s_d + hbar, p["ln_d_gamma"], p["ln_d_beta"])
        s_t = relu(p["W_t"] @ (d + hbar) + p["b_t"])
        t = oracle_layer_norm(s_t + d, p["ln_t_gamma"], p["ln_t_beta"])
    elif structure == "hier_intent_first":
        s_t = relu(p["W_t"] @ hbar + p["b_t"])
        t = oracle_layer_norm(s_t + hbar, p["ln_t_gamma"], p["ln_t_beta"])
        s_d = relu(p["W_d"] @ (t + hbar) + p["b_d"])
        d = oracle_layer_norm(s_d + t, p["ln_d_gamma"], p["ln_d_beta"])
    elif structure == "flat_split":
        s_d = relu(p["W_d"] @ hbar + p["b_d"])
        d = oracle_layer_norm(s_d + hbar, p["ln_d_gamma"], p["ln_d_beta"])
        s_t = relu(p["W_t"] @ hbar + p["b_t"])
        t = oracle_layer_norm(s_t + hbar, p["ln_t_gamma"], p["ln_t_beta"])
    elif structure == "flat_shared":
        s_d = s_t = d = t = hbar
    else:
        raise ValueError(structure)
    p_domain = oracle_softmax(p["head_d_W"] @ d + p["head_d_b"])
    p_intent = oracle_softmax(p["head_t_W"] @ t + p["head_t_b"])
    return {"s_d": s_d, "d": d, "s_t": s_t, "t": t,
            "p_domain": p_domain, "p_intent": p_intent}


def brute_metrics(preds, golds, oos="oos"):
    """Slow, loop-by-loop metric counting used as the exact oracle."""
    n = len(golds)
    correct = sum(1 for i in range(n) if preds[i] == golds[i])
    tp = sum(1 for i in range(n) if preds[i] == oos and golds[i] == oos)
    fp = sum(1 for i in range(n) if preds[i] == oos and golds[i] != oos)
    fn = sum(1 for i in range(n) if preds[i] != oos and golds[i] == oos)
    tn = n - tp - fp - fn
    in_idx = [i for i in range(n) if golds[i] != oos]
    in_correct = sum(1 for i in in_idx if preds[i] == golds[i])
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {
        "accuracy_all": correct / n,
        "accuracy_in": in_correct / len(in_idx) if in_idx else 0.0,
        "oos_precision": precision, "oos_recall": recall, "oos_f1": f1,
        "tp": tp, "fp": fp, "fn": fn, "tn": tn,
        "in_correct": in_correct, "in_total": len(in_idx),
    }


# ------------------------------------------------------------- builders

PARAM_NAMES = ("W_d", "b_d", "ln_d_gamma", "ln_d_beta", "W_t", "b_t",
               "ln_t_gamma", "ln_t_beta", "head_d_W", "head_d_b",
               "head_t_W", "head_t_b", "lambda_raw")


def make_param_arrays(rng, dim, n_domains, n_intents):
    return {
        "W_d": rng.normal(size=(dim, dim)), "b_d": rng.normal(size=dim),
        "ln_d_gamma": rng.uniform(0.5, 1.5, size=dim), "ln_d_beta": rng.normal(size=dim) * 0.1,
        "W_t": rng.normal(size=(dim, dim)), "b_t": rng.normal(size=dim),
        "ln_t_gamma": rng.uniform(0.5, 1.5, size=dim), "ln_t_beta": rng.normal(size=dim) * 0.1,
        "head_d_W": rng.normal(size=(n_domains, dim)), "head_d_b": rng.normal(size=n_domains),
        "head_t_W": rng.normal(size=(n_intents, dim)), "head_t_b": rng.normal(size=n_intents),
        "lambda_raw": np.asarray(rng.normal()),
    }


def model_from_arrays(params, dim, n_domains, n_intents, structure,
                      encoder=EXTERNAL_ENCODER, kind="joint"):
    nodes = {name: Node(params[name]) for name in PARAM_NAMES}
    return JointModel(dim=dim, n_domains=n_domains, n_intents=n_intents,
                      structure=StructureTag.parse(structure) if isinstance(structure, str) else structure,
                      encoder=encoder, kind=kind, **nodes)


# ------------------------------------------------------------- fixtures


@pytest.fixture(scope="session")
def synth_small():
    return synth_dataset(seed=7, n_domains=3, intents_per_domain=3,
                         examples_per_intent=20, oos_examples=30)


@pytest.fixture(scope="session")
def trained_small(synth_small):
    """One modest trained joint model shared by read-only tests."""
    dataset, labels = synth_small
    config = TrainConfig(dim=32, buckets=1 << 10, max_epochs=15,
                         early_stop_patience=15, seed=5)
    model, history = train(dataset, labels, config)
    return model, history, dataset, labels, config
