"""Corpus ingestion, sequence packing and batching."""

from __future__ import annotations

import logging
import math
import struct
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ffnlab.rng import stream
from ffnlab.tokenizer import EOT, TokenizerModel, encode

log = logging.getLogger(__name__)

CACHE_MAGIC = b"FFNPACK\x00"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<8sIII")  # magic, version, seq_len, count


@dataclass
class PackedDataset:
    """``rows[i]`` holds seq_len + 1 ids: inputs are ``[:-1]``, targets ``[1:]``."""

    rows: np.ndarray
    seq_len: int
    split: str = "train"

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def inputs(self) -> np.ndarray:
        return self.rows[:, :-1]

    @property
    def targets(self) -> np.ndarray:
        return self.rows[:, 1:]


def read_documents(paths: Sequence[str | Path]) -> list[str]:
    """Each file in a directory is a document; a plain file holds one document per line."""
    docs: list[str] = []
    for p in map(Path, paths):
        if p.is_dir():
            for f in sorted(p.iterdir()):
                if f.is_file():
                    docs.append(f.read_text(encoding="utf-8", errors="surrogateescape"))
        elif p.is_file():
            with p.open(encoding="utf-8", errors="surrogateescape") as fh:
                docs.extend(line.rstrip("\n") for line in fh if line.strip())
        else:
            raise FileNotFoundError(f"corpus path not found: {p}")
    return docs


def token_stream(docs: Iterable[Sequence[int]]) -> np.ndarray:
    """Concatenate documents with an end-of-text id between consecutive ones."""
    parts: list[np.ndarray] = []
    for i, d in enumerate(docs):
        if i:
            parts.append(np.array([EOT], dtype=np.int32))
        parts.append(np.asarray(d, dtype=np.int32))
    if not parts:
        return np.zeros(0, dtype=np.int32)
    return np.concatenate(parts)


def encode_documents(tok: TokenizerModel, docs: Iterable[str]) -> np.ndarray:
    return token_stream(encode(tok, d) for d in docs)


def pack_corpus(tokens: Sequence[int] | np.ndarray, seq_len: int, split: str = "train",
                vocab_size: int | None = None) -> PackedDataset:
    """Windows of seq_len + 1 ids at stride seq_len; the short remainder is dropped."""
    ids = np.asarray(tokens, dtype=np.int32)
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    if vocab_size is not None and ids.size and int(ids.max()) >= vocab_size:
        raise ValueError(f"token id {int(ids.max())} >= vocab_size {vocab_size}")
    n = (ids.size - 1) // seq_len if ids.size > seq_len else 0
    if n == 0:
        log.warning("stream of %d tokens is shorter than one window of %d; dataset is empty",
                    ids.size, seq_len + 1)
        return PackedDataset(np.zeros((0, seq_len + 1), dtype=np.int32), seq_len, split)
    idx = np.arange(n)[:, None] * seq_len + np.arange(seq_len + 1)[None, :]
    return PackedDataset(ids[idx], seq_len, split)


def num_batches(n: int, batch_size: int) -> int:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return math.ceil(n / batch_size)


def batch_order(n: int, shuffle_seed: int | None) -> np.ndarray:
    if shuffle_seed is None:
        return np.arange(n)
    return stream(shuffle_seed, "shuffle").permutation(n)


def batches(dataset: PackedDataset, batch_size: int,
            shuffle_seed: int | None = None, start: int = 0) -> Iterator[np.ndarray]:
    """Yield row blocks of shape (b, seq_len + 1); the last block may be partial.

    ``start`` skips that many batches, which is how a resumed run picks up
    the same permutation where it left off.
    """
    n = len(dataset)
    order = batch_order(n, shuffle_seed)
    for k in range(start, num_batches(n, batch_size)):
        yield dataset.rows[order[k * batch_size:(k + 1) * batch_size]]


def save_packed(dataset: PackedDataset, path: str | Path) -> None:
    rows = np.ascontiguousarray(dataset.rows, dtype="<i4")
    with open(path, "wb") as fh:
        fh.write(_CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, dataset.seq_len, len(dataset)))
        fh.write(rows.tobytes())


def load_packed(path: str | Path, split: str = "train") -> PackedDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _CACHE_HEADER.size:
        raise ValueError(f"{path}: truncated packed cache")
    magic, version, seq_len, count = _CACHE_HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC:
        raise ValueError(f"{path}: not a packed cache")
    if version != CACHE_VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    body = raw[_CACHE_HEADER.size:]
    if len(body) != 4 * count * (seq_len + 1):
        raise ValueError(f"{path}: truncated packed cache")
    rows = np.frombuffer(body, dtype="<i4").reshape(count, seq_len + 1).astype(np.int32)
    return PackedDataset(rows, seq_len, split)
