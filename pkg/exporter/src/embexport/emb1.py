"""Reader and writer for the EMB1 embedding file format.

Layout, all integers little-endian:

    magic "EMB1" | u32 record count | u32 dimension |
    per record: u32 text byte length | UTF-8 text | dimension float32 values
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"EMB1"


class Emb1FormatError(ValueError):
    """Malformed EMB1 file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def write_embeddings(path, records, dim: int) -> None:
    """Write ``records`` (ordered ``(text, vector)`` pairs) to ``path``."""
    if dim <= 0:
        raise ValueError(f"dimension must be positive, got {dim}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", len(records), dim))
        for text, vector in records:
            arr = np.ascontiguousarray(vector, dtype="<f4")
            if arr.shape != (dim,):
                raise ValueError(f"vector for {text!r} has shape {arr.shape}, want ({dim},)")
            encoded = text.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(arr.tobytes())


def read_embeddings(path) -> tuple[int, list[tuple[str, np.ndarray]]]:
    """Parse an EMB1 file into ``(dim, [(text, float32 vector), ...])``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise Emb1FormatError("bad magic", 0)
    if len(blob) < 12:
        raise Emb1FormatError("truncated header", len(blob))
    count, dim = struct.unpack_from("<II", blob, 4)
    if dim == 0:
        raise Emb1FormatError("zero dimension", 8)
    pos = 12
    records: list[tuple[str, np.ndarray]] = []
    for _ in range(count):
        if pos + 4 > len(blob):
            raise Emb1FormatError("truncated record header", pos)
        (text_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        end = pos + text_len + 4 * dim
        if end > len(blob):
            raise Emb1FormatError("truncated record", pos)
        text = blob[pos:pos + text_len].decode("utf-8")
        vector = np.frombuffer(blob, dtype="<f4", count=dim, offset=pos + text_len)
        records.append((text, vector.copy()))
        pos = end
    if pos != len(blob):
        raise Emb1FormatError("trailing bytes after final record", pos)
    return dim, records
