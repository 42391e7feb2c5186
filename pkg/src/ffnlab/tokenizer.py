"""Byte-level BPE tokenizer.

Id 0 is the end-of-text special, ids 1..256 are the raw bytes, and every
learned merge appends one id. Text is split into whitespace-led chunks
before counting and encoding, so merges never span a chunk boundary.
"""

from __future__ import annotations

import hashlib
import heapq
import re
from collections import Counter, defaultdict
from collections.abc import Iterable
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

EOT = 0
EOT_BYTES = b"<|endoftext|>"
N_SPECIAL = 1
BASE_VOCAB = N_SPECIAL + 256
MAX_VOCAB = 10_000
FORMAT_TAG = "ffnlab-bpe"
FORMAT_VERSION = 1

_CHUNK = re.compile(rb" ?[^\s]+|\s+")


def _chunks(data: bytes) -> list[bytes]:
    return _CHUNK.findall(data)


@dataclass
class TokenizerModel:
    vocab: list[bytes]
    merges: list[tuple[int, int]]
    ranks: dict[tuple[int, int], int] = field(init=False, repr=False)

    def __post_init__(self):
        self.ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._encode_chunk = lru_cache(maxsize=1 << 16)(self._encode_chunk_uncached)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def token_to_id(self) -> dict[bytes, int]:
        return {tok: i for i, tok in enumerate(self.vocab) if i >= N_SPECIAL}

    def digest(self) -> str:
        return hashlib.sha256(dumps(self).encode()).hexdigest()

    def _encode_chunk_uncached(self, chunk: bytes) -> tuple[int, ...]:
        ids = [b + N_SPECIAL for b in chunk]
        ranks = self.ranks
        while len(ids) > 1:
            best = None
            best_rank = None
            for pair in zip(ids, ids[1:]):
                r = ranks.get(pair)
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = pair, r
            if best is None:
                break
            new_id = BASE_VOCAB + best_rank
            out = []
            i = 0
            while i < len(ids):
                if i + 1 < len(ids) and ids[i] == best[0] and ids[i + 1] == best[1]:
                    out.append(new_id)
                    i += 2
                else:
                    out.append(ids[i])
                    i += 1
            ids = out
        return tuple(ids)


def train_tokenizer(corpus: Iterable[str] | str, vocab_max: int = MAX_VOCAB) -> TokenizerModel:
    """Learn merges by repeatedly fusing the most frequent adjacent pair.

    Stops at ``vocab_max`` entries or when no pair occurs at least twice.
    Frequency ties go to the lexicographically smallest (left, right) bytes.
    """
    if vocab_max < BASE_VOCAB:
        raise ValueError(f"vocab_max must be >= {BASE_VOCAB}")
    if vocab_max > MAX_VOCAB:
        raise ValueError(f"vocab_max must be <= {MAX_VOCAB}")
    docs = [corpus] if isinstance(corpus, str) else list(corpus)
    counts: Counter[bytes] = Counter()
    for doc in docs:
        counts.update(_chunks(doc.encode("utf-8", errors="surrogateescape")))
    if not counts:
        raise ValueError("cannot train a tokenizer on an empty corpus")

    vocab: list[bytes] = [EOT_BYTES] + [bytes([b]) for b in range(256)]
    words = [[b + N_SPECIAL for b in w] for w in counts]
    freqs = list(counts.values())

    pair_count: defaultdict[tuple[int, int], int] = defaultdict(int)
    where: defaultdict[tuple[int, int], set[int]] = defaultdict(set)
    for wi, w in enumerate(words):
        f = freqs[wi]
        for pair in zip(w, w[1:]):
            pair_count[pair] += f
            where[pair].add(wi)

    def key(pair):
        return (-pair_count[pair], vocab[pair[0]], vocab[pair[1]])

    heap = [(key(p), p) for p in pair_count]
    heapq.heapify(heap)
    merges: list[tuple[int, int]] = []

    while len(vocab) < vocab_max and heap:
        k, pair = heapq.heappop(heap)
        cnt = pair_count.get(pair, 0)
        if cnt <= 0 or k[0] != -cnt:
            continue  # stale heap entry
        if cnt < 2:
            break
        new_id = len(vocab)
        vocab.append(vocab[pair[0]] + vocab[pair[1]])
        merges.append(pair)
        touched: set[tuple[int, int]] = set()
        for wi in list(where[pair]):
            w = words[wi]
            f = freqs[wi]
            for p in zip(w, w[1:]):
                pair_count[p] -= f
                touched.add(p)
            out = []
            i = 0
            while i < len(w):
                if i + 1 < len(w) and w[i] == pair[0] and w[i + 1] == pair[1]:
                    out.append(new_id)
                    i += 2
                else:
                    out.append(w[i])
                    i += 1
            words[wi] = out
            for p in zip(out, out[1:]):
                pair_count[p] += f
                where[p].add(wi)
                touched.add(p)
        del pair_count[pair]
        where.pop(pair, None)
        for p in touched:
            c = pair_count.get(p, 0)
            if c > 0:
                heapq.heappush(heap, (key(p), p))
            else:
                pair_count.pop(p, None)
    return TokenizerModel(vocab, merges)


def encode_bytes(model: TokenizerModel, data: bytes) -> list[int]:
    ids: list[int] = []
    for chunk in _chunks(data):
        ids.extend(model._encode_chunk(chunk))
    return ids


def encode(model: TokenizerModel, text: str) -> list[int]:
    """Apply learned merges greedily, lowest rank first, within each chunk."""
    return encode_bytes(model, text.encode("utf-8", errors="surrogateescape"))


def decode_bytes(model: TokenizerModel, ids: Iterable[int]) -> bytes:
    parts = []
    n = model.vocab_size
    for i in ids:
        if not 0 <= i < n:
            raise KeyError(f"unknown token id {i}")
        parts.append(model.vocab[i])
    return b"".join(parts)


def decode(model: TokenizerModel, ids: Iterable[int]) -> str:
    return decode_bytes(model, ids).decode("utf-8", errors="surrogateescape")


def dumps(model: TokenizerModel) -> str:
    lines = [f"{FORMAT_TAG}\t{FORMAT_VERSION}\t{model.vocab_size}\t{len(model.merges)}"]
    lines += [f"{i}\t{tok.hex()}" for i, tok in enumerate(model.vocab)]
    lines += [f"{a}\t{b}" for a, b in model.merges]
    return "\n".join(lines) + "\n"


def loads(text: str) -> TokenizerModel:
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty tokenizer file")
    head = lines[0].split("\t")
    if len(head) != 4 or head[0] != FORMAT_TAG:
        raise ValueError("not a tokenizer file")
    if int(head[1]) != FORMAT_VERSION:
        raise ValueError(f"unsupported tokenizer version {head[1]}")
    n_vocab, n_merges = int(head[2]), int(head[3])
    if len(lines) != 1 + n_vocab + n_merges:
        raise ValueError("tokenizer file is truncated or has trailing lines")
    vocab = []
    for expect, line in enumerate(lines[1:1 + n_vocab]):
        i, hx = line.split("\t")
        if int(i) != expect:
            raise ValueError(f"vocabulary ids must be dense, got {i} at {expect}")
        vocab.append(bytes.fromhex(hx))
    merges = []
    for line in lines[1 + n_vocab:]:
        a, b = line.split("\t")
        merges.append((int(a), int(b)))
    model = TokenizerModel(vocab, merges)
    for k, (a, b) in enumerate(merges):
        if vocab[BASE_VOCAB + k] != vocab[a] + vocab[b]:
            raise ValueError(f"merge {k} does not produce vocabulary entry {BASE_VOCAB + k}")
    return model


def save(model: TokenizerModel, path: str | Path) -> None:
    Path(path).write_text(dumps(model), encoding="ascii")


def load(path: str | Path) -> TokenizerModel:
    return loads(Path(path).read_text(encoding="ascii"))
