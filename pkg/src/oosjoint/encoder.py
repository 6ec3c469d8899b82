"""Pooled utterance representations.

Two interchangeable sources produce the fixed-dimension vector the model
consumes: a trainable hashed-n-gram embedding table, and read-only stores
of precomputed vectors loaded from EMB1 files (see ``EMB1 format`` below).

EMB1 format (binary, little-endian):
    magic ``EMB1`` | u32 record count | u32 dimension |
    per record: u32 text byte length, UTF-8 text, dimension * f32 values.
"""

from __future__ import annotations

import logging
import re
import struct
from dataclasses import dataclass, field

import numpy as np

from .diffcore import Array, Node, mean_pool, take_row

log = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_NGRAM_SEPARATOR = b"\x1f"

EMB1_MAGIC = b"EMB1"


class EmptyUtteranceError(ValueError):
    """The text contains no alphanumeric characters."""


class EmbeddingFormatError(ValueError):
    """An embedding file is malformed; carries the offending byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class CoverageError(LookupError):
    """Utterances are missing from an embedding store."""

    def __init__(self, missing: list[str]):
        preview = ", ".join(repr(t) for t in missing[:5])
        suffix = "" if len(missing) <= 5 else f" (+{len(missing) - 5} more)"
        super().__init__(f"{len(missing)} utterance(s) missing from embedding store: {preview}{suffix}")
        self.missing = missing


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    tokens = _TOKEN_RE.findall(text.lower())
    if not tokens:
        raise EmptyUtteranceError(f"no alphanumeric characters in {text!r}")
    return tokens


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash; stable across platforms."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


@dataclass
class HashEncoder:
    """Trainable embedding table addressed by hashed token n-grams."""

    buckets: int
    dim: int
    table: Node
    orders: tuple[int, ...] = (1, 2)

    def __post_init__(self):
        if self.buckets < 2 or (self.buckets & (self.buckets - 1)) != 0:
            raise ValueError(f"bucket count must be a power of two >= 2, got {self.buckets}")
        if self.table.value.shape != (self.buckets, self.dim):
            raise ValueError(
                f"table shape {self.table.value.shape} does not match ({self.buckets}, {self.dim})"
            )
        if not self.orders or any(k < 1 for k in self.orders):
            raise ValueError(f"n-gram orders must be positive, got {self.orders}")
        self.orders = tuple(sorted(set(self.orders)))

    @classmethod
    def create(cls, buckets: int, dim: int, rng: np.random.Generator,
               orders: tuple[int, ...] = (1, 2)) -> "HashEncoder":
        """Fresh encoder with the table drawn uniformly from [-1/sqrt(dim), 1/sqrt(dim)]."""
        bound = 1.0 / np.sqrt(dim)
        table = Node(rng.uniform(-bound, bound, size=(buckets, dim)))
        return cls(buckets=buckets, dim=dim, table=table, orders=orders)


def ngram_ids(tokens: list[str], encoder: HashEncoder) -> list[int]:
    """Bucket ids for every configured n-gram order, unigrams first."""
    if not tokens:
        raise EmptyUtteranceError("no tokens to hash")
    ids: list[int] = []
    for k in encoder.orders:
        for start in range(len(tokens) - k + 1):
            span = _NGRAM_SEPARATOR.join(t.encode("utf-8") for t in tokens[start:start + k])
            ids.append(fnv1a_64(span) % encoder.buckets)
    return ids


def encode(tokens: list[str], encoder: HashEncoder) -> Node:
    """Mean of the table rows selected by the token n-grams (differentiable)."""
    rows = [take_row(encoder.table, i) for i in ngram_ids(tokens, encoder)]
    return mean_pool(rows)


@dataclass
class EmbeddingStore:
    """Frozen utterance -> vector map keyed by exact text."""

    dim: int
    vectors: dict[str, Array] = field(default_factory=dict)
    duplicates: int = 0

    def __len__(self) -> int:
        return len(self.vectors)


def load_embedding_store(path) -> EmbeddingStore:
    """Parse an EMB1 file; duplicate texts keep the last record."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != EMB1_MAGIC:
        raise EmbeddingFormatError("bad magic, expected EMB1", 0)
    if len(blob) < 12:
        raise EmbeddingFormatError("truncated header", len(blob))
    count, dim = struct.unpack_from("<II", blob, 4)
    if dim == 0:
        raise EmbeddingFormatError("dimension is zero", 8)
    offset = 12
    vectors: dict[str, Array] = {}
    duplicates = 0
    for _ in range(count):
        if offset + 4 > len(blob):
            raise EmbeddingFormatError("truncated record header", offset)
        (text_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        if offset + text_len + 4 * dim > len(blob):
            raise EmbeddingFormatError("truncated record", offset)
        text = blob[offset:offset + text_len].decode("utf-8")
        offset += text_len
        vec = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset).astype(np.float64)
        offset += 4 * dim
        if text in vectors:
            duplicates += 1
        vectors[text] = vec
    if offset != len(blob):
        raise EmbeddingFormatError("trailing bytes after final record", offset)
    if duplicates:
        log.warning("embedding store %s: %d duplicate key(s), last record wins", path, duplicates)
    return EmbeddingStore(dim=dim, vectors=vectors, duplicates=duplicates)


def write_embedding_store(path, vectors: dict[str, Array], dim: int) -> None:
    """Write a text -> vector map as an EMB1 file, in mapping order."""
    if dim <= 0:
        raise ValueError("dimension must be positive")
    with open(path, "wb") as fh:
        fh.write(EMB1_MAGIC)
        fh.write(struct.pack("<II", len(vectors), dim))
        for text, vec in vectors.items():
            arr = np.asarray(vec, dtype="<f4")
            if arr.shape != (dim,):
                raise ValueError(f"vector for {text!r} has shape {arr.shape}, expected ({dim},)")
            encoded = text.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(arr.tobytes())


def missing_texts(store: EmbeddingStore, texts) -> list[str]:
    """Texts not present as exact-match keys, in first-seen order."""
    seen: set[str] = set()
    missing: list[str] = []
    for t in texts:
        if t not in store.vectors and t not in seen:
            seen.add(t)
            missing.append(t)
    return missing


def lookup(store: EmbeddingStore, text: str) -> Node:
    """Exact-match lookup returning a constant leaf node; misses raise."""
    try:
        vec = store.vectors[text]
    except KeyError:
        raise CoverageError([text]) from None
    return Node(vec)
