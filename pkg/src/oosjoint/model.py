"""Joint domain/intent architecture: transform blocks, dual heads, variants.

The domain block maps the pooled vector through a ReLU transform, residual
connection, and layer norm; the intent block does the same on top of the
domain representation.  Four wirings are supported:

* ``hier_domain_first`` - domain block first, its output feeds the intent block
* ``hier_intent_first``  - the exact mirror
* ``flat_split``         - two independent transform branches
* ``flat_shared``        - both heads read the pooled vector directly

Checkpoint format HJM1 (binary, little-endian): magic ``HJM1``, u32 header
length, UTF-8 JSON header (dimensions, structure, encoder config, label
space, tensor manifest), then each tensor as f32 in manifest order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import LabelSpace
from .diffcore import Array, DimensionError, Node, add, layer_norm, linear, relu, softmax
from .encoder import HashEncoder

CHECKPOINT_MAGIC = b"HJM1"
CHECKPOINT_VERSION = 1

EXTERNAL_ENCODER = "external"


class CheckpointFormatError(ValueError):
    """A checkpoint file is malformed."""


class StructureTag(Enum):
    FLAT_SHARED = "flat_shared"
    FLAT_SPLIT = "flat_split"
    HIER_INTENT_FIRST = "hier_intent_first"
    HIER_DOMAIN_FIRST = "hier_domain_first"

    @classmethod
    def parse(cls, name: str) -> "StructureTag":
        try:
            return cls(name.strip().lower().replace("-", "_"))
        except ValueError:
            valid = ", ".join(t.value for t in cls)
            raise ValueError(f"unknown structure {name!r}; expected one of: {valid}") from None


@dataclass
class JointModel:
    """All learnable tensors plus the structure tag and encoder.

    ``encoder`` is either a :class:`HashEncoder` (its table trains with the
    model) or the string ``"external"`` for frozen precomputed vectors.
    ``kind`` distinguishes the full joint model from the intent-only
    baseline that shares this parameter layout.
    """

    dim: int
    n_domains: int
    n_intents: int
    structure: StructureTag
    W_d: Node
    b_d: Node
    ln_d_gamma: Node
    ln_d_beta: Node
    W_t: Node
    b_t: Node
    ln_t_gamma: Node
    ln_t_beta: Node
    head_d_W: Node
    head_d_b: Node
    head_t_W: Node
    head_t_b: Node
    lambda_raw: Node
    encoder: HashEncoder | str = EXTERNAL_ENCODER
    kind: str = "joint"

    def param_items(self) -> list[tuple[str, Node]]:
        """Named parameters in the fixed checkpoint order (encoder table last)."""
        items = [
            ("W_d", self.W_d), ("b_d", self.b_d),
            ("ln_d_gamma", self.ln_d_gamma), ("ln_d_beta", self.ln_d_beta),
            ("W_t", self.W_t), ("b_t", self.b_t),
            ("ln_t_gamma", self.ln_t_gamma), ("ln_t_beta", self.ln_t_beta),
            ("head_d_W", self.head_d_W), ("head_d_b", self.head_d_b),
            ("head_t_W", self.head_t_W), ("head_t_b", self.head_t_b),
            ("lambda_raw", self.lambda_raw),
        ]
        if isinstance(self.encoder, HashEncoder):
            items.append(("encoder_table", self.encoder.table))
        return items

    def zero_grad(self) -> None:
        for _, node in self.param_items():
            node.zero_grad()

    def snapshot(self) -> dict[str, Array]:
        return {name: node.value.copy() for name, node in self.param_items()}

    def restore(self, snap: dict[str, Array]) -> None:
        for name, node in self.param_items():
            node.value[...] = snap[name]


@dataclass
class ForwardOutput:
    """Representations, head logits, and the resulting distributions."""

    p_domain: Array
    p_intent: Array
    logits_domain: Node
    logits_intent: Node
    d: Node
    t: Node
    s_d: Node
    s_t: Node


def init_model(dim: int, n_domains: int, n_intents: int, structure: StructureTag,
               rng: np.random.Generator, encoder: HashEncoder | str = EXTERNAL_ENCODER,
               kind: str = "joint") -> JointModel:
    """Seeded initialization: uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights,
    unit-gamma/zero-beta layer norms, lambda_raw = 0."""
    if n_domains < 2 or n_intents < 2:
        raise ValueError("need at least 2 domain and 2 intent classes (including oos)")
    if kind not in ("joint", "baseline"):
        raise ValueError(f"unknown model kind {kind!r}")
    bound = 1.0 / np.sqrt(dim)

    def u(*shape):
        return Node(rng.uniform(-bound, bound, size=shape))

    return JointModel(
        dim=dim, n_domains=n_domains, n_intents=n_intents, structure=structure,
        W_d=u(dim, dim), b_d=u(dim),
        ln_d_gamma=Node(np.ones(dim)), ln_d_beta=Node(np.zeros(dim)),
        W_t=u(dim, dim), b_t=u(dim),
        ln_t_gamma=Node(np.ones(dim)), ln_t_beta=Node(np.zeros(dim)),
        head_d_W=u(n_domains, dim), head_d_b=u(n_domains),
        head_t_W=u(n_intents, dim), head_t_b=u(n_intents),
        lambda_raw=Node(0.0),
        encoder=encoder, kind=kind,
    )


def domain_block(hbar: Node, model: JointModel) -> tuple[Node, Node]:
    """ReLU transform of the pooled vector, then residual + layer norm."""
    s_d = relu(linear(hbar, model.W_d, model.b_d))
    d = layer_norm(add(s_d, hbar), model.ln_d_gamma, model.ln_d_beta)
    return s_d, d


def intent_block(hbar: Node, d: Node, model: JointModel) -> tuple[Node, Node]:
    """Transform of (domain representation + pooled vector); the residual adds d."""
    s_t = relu(linear(add(d, hbar), model.W_t, model.b_t))
    t = layer_norm(add(s_t, d), model.ln_t_gamma, model.ln_t_beta)
    return s_t, t


def forward(hbar: Node, model: JointModel) -> ForwardOutput:
    """Run the structure-specific wiring and both heads on one pooled vector."""
    if hbar.value.shape != (model.dim,):
        raise DimensionError(
            f"pooled vector has shape {hbar.value.shape}, model expects ({model.dim},)"
        )
    structure = model.structure
    if structure is StructureTag.HIER_DOMAIN_FIRST:
        s_d, d = domain_block(hbar, model)
        s_t, t = intent_block(hbar, d, model)
    elif structure is StructureTag.HIER_INTENT_FIRST:
        s_t = relu(linear(hbar, model.W_t, model.b_t))
        t = layer_norm(add(s_t, hbar), model.ln_t_gamma, model.ln_t_beta)
        s_d = relu(linear(add(t, hbar), model.W_d, model.b_d))
        d = layer_norm(add(s_d, t), model.ln_d_gamma, model.ln_d_beta)
    elif structure is StructureTag.FLAT_SPLIT:
        s_d = relu(linear(hbar, model.W_d, model.b_d))
        d = layer_norm(add(s_d, hbar), model.ln_d_gamma, model.ln_d_beta)
        s_t = relu(linear(hbar, model.W_t, model.b_t))
        t = layer_norm(add(s_t, hbar), model.ln_t_gamma, model.ln_t_beta)
    elif structure is StructureTag.FLAT_SHARED:
        s_d = s_t = d = t = hbar
    else:  # pragma: no cover
        raise ValueError(f"unhandled structure {structure}")

    logits_d = linear(d, model.head_d_W, model.head_d_b)
    logits_t = linear(t, model.head_t_W, model.head_t_b)
    return ForwardOutput(
        p_domain=softmax(logits_d.value), p_intent=softmax(logits_t.value),
        logits_domain=logits_d, logits_intent=logits_t,
        d=d, t=t, s_d=s_d, s_t=s_t,
    )


def single_head_baseline(hbar: Node, model: JointModel) -> tuple[Node, Array]:
    """Intent head applied directly to the pooled vector; no domain path, no mixing weight."""
    logits_t = linear(hbar, model.head_t_W, model.head_t_b)
    return logits_t, softmax(logits_t.value)


def _header_dict(model: JointModel, labels: LabelSpace) -> dict:
    if isinstance(model.encoder, HashEncoder):
        enc = {"mode": "hash", "buckets": model.encoder.buckets, "orders": list(model.encoder.orders)}
    else:
        enc = {"mode": EXTERNAL_ENCODER}
    tensors = [[name, list(node.value.shape)] for name, node in model.param_items()]
    return {
        "format": "HJM1",
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "structure": model.structure.value,
        "dim": model.dim,
        "n_domains": model.n_domains,
        "n_intents": model.n_intents,
        "encoder": enc,
        "labels": labels.to_json_dict(),
        "tensors": tensors,
    }


def save_checkpoint(path, model: JointModel, labels: LabelSpace) -> None:
    """Write the HJM1 file; tensors are stored at single precision."""
    header = json.dumps(_header_dict(model, labels), sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for _, node in model.param_items():
            fh.write(np.ascontiguousarray(node.value, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[JointModel, LabelSpace]:
    """Read an HJM1 file back into a model (values are the stored f32, widened)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("bad magic, expected HJM1")
    (header_len,) = struct.unpack_from("<I", blob, 4)
    if len(blob) < 8 + header_len:
        raise CheckpointFormatError("truncated header")
    try:
        header = json.loads(blob[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable header: {exc}") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {header.get('version')!r}")

    offset = 8 + header_len
    arrays: dict[str, Array] = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(blob):
            raise CheckpointFormatError(f"truncated tensor {name!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        arrays[name] = arr.astype(np.float64).reshape(shape)
        offset = end
    if offset != len(blob):
        raise CheckpointFormatError("trailing bytes after final tensor")

    labels = LabelSpace.from_json_dict(header["labels"])
    enc_cfg = header["encoder"]
    if enc_cfg["mode"] == "hash":
        encoder: HashEncoder | str = HashEncoder(
            buckets=enc_cfg["buckets"], dim=header["dim"],
            table=Node(arrays["encoder_table"]), orders=tuple(enc_cfg["orders"]),
        )
    else:
        encoder = EXTERNAL_ENCODER
    model = JointModel(
        dim=header["dim"], n_domains=header["n_domains"], n_intents=header["n_intents"],
        structure=StructureTag.parse(header["structure"]),
        W_d=Node(arrays["W_d"]), b_d=Node(arrays["b_d"]),
        ln_d_gamma=Node(arrays["ln_d_gamma"]), ln_d_beta=Node(arrays["ln_d_beta"]),
        W_t=Node(arrays["W_t"]), b_t=Node(arrays["b_t"]),
        ln_t_gamma=Node(arrays["ln_t_gamma"]), ln_t_beta=Node(arrays["ln_t_beta"]),
        head_d_W=Node(arrays["head_d_W"]), head_d_b=Node(arrays["head_d_b"]),
        head_t_W=Node(arrays["head_t_W"]), head_t_b=Node(arrays["head_t_b"]),
        lambda_raw=Node(arrays["lambda_raw"]),
        encoder=encoder, kind=header.get("kind", "joint"),
    )
    return model, labels
