import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffnlab import tokenizer as tk
from ffnlab.data import (PackedDataset, batches, encode_documents, load_packed, num_batches,
                         pack_corpus, read_documents, save_packed, token_stream)


def windows_oracle(n_tokens, seq_len):
    """Enumerate start offsets explicitly and keep the ones with a full window."""
    out, start = [], 0
    while start + seq_len + 1 <= n_tokens:
        out.append(list(range(start, start + seq_len + 1)))
        start += seq_len
    return out


@pytest.mark.parametrize("n,expected", [(513, 2), (257, 1), (256, 0), (769, 3), (768, 2)])
def test_window_counts(n, expected):
    assert len(pack_corpus(np.arange(n), 256)) == expected == len(windows_oracle(n, 256))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(0, 200), seq_len=st.integers(1, 20))
def test_packing_matches_oracle(n, seq_len):
    ds = pack_corpus(np.arange(n), seq_len)
    assert ds.rows.tolist() == windows_oracle(n, seq_len)
    assert ds.rows.shape[1] == seq_len + 1
    np.testing.assert_array_equal(ds.targets[:, :-1], ds.inputs[:, 1:])


def test_empty_stream_reported(caplog):
    with caplog.at_level(logging.WARNING):
        ds = pack_corpus(np.arange(10), 16)
    assert len(ds) == 0 and ds.rows.shape == (0, 17)
    assert "empty" in caplog.text
    assert list(batches(ds, 4)) == []


def test_vocab_bound_enforced():
    with pytest.raises(ValueError):
        pack_corpus([1, 2, 30], 2, vocab_size=30)


@pytest.mark.parametrize("n,b,expected", [(144_846, 16, 9_053), (1_212, 16, 76),
                                          (510_089, 16, 31_881), (33, 16, 3), (0, 16, 0)])
def test_num_batches(n, b, expected):
    assert num_batches(n, b) == expected


def test_partial_final_batch():
    ds = pack_corpus(np.arange(33 * 4 + 1), 4)
    assert [len(b) for b in batches(ds, 16)] == [16, 16, 1]


@settings(max_examples=40, deadline=None)
@given(n=st.integers(0, 60), b=st.integers(1, 17), seed=st.one_of(st.none(), st.integers(0, 99)))
def test_epoch_is_a_permutation(n, b, seed):
    ds = PackedDataset(np.arange(n * 3, dtype=np.int32).reshape(n, 3), 2)
    got = list(batches(ds, b, seed))
    assert len(got) == -(-n // b)
    seen = sorted(int(r[0]) // 3 for blk in got for r in blk)
    assert seen == list(range(n))


def test_shuffle_is_seeded():
    ds = PackedDataset(np.arange(300, dtype=np.int32).reshape(100, 3), 2)
    first = lambda s: np.concatenate(list(batches(ds, 7, s)))[:, 0].tolist()  # noqa: E731
    assert first(1) == first(1)
    assert first(1) != first(2)
    assert first(None) == list(range(0, 300, 3))


def test_start_skips_batches():
    ds = PackedDataset(np.arange(300, dtype=np.int32).reshape(100, 3), 2)
    full = list(batches(ds, 8, 5))
    tail = list(batches(ds, 8, 5, start=4))
    assert len(tail) == len(full) - 4
    for a, b in zip(full[4:], tail):
        np.testing.assert_array_equal(a, b)


def test_token_stream_separators():
    s = token_stream([[5, 6], [7], [8, 9]])
    assert s.tolist() == [5, 6, tk.EOT, 7, tk.EOT, 8, 9]
    assert token_stream([]).size == 0


def test_read_documents(tmp_path):
    d = tmp_path / "docs"
    d.mkdir()
    (d / "b.txt").write_text("second\nstill second")
    (d / "a.txt").write_text("first")
    lines = tmp_path / "records.txt"
    lines.write_text("one\n\ntwo\n")
    assert read_documents([d]) == ["first", "second\nstill second"]
    assert read_documents([lines]) == ["one", "two"]
    with pytest.raises(FileNotFoundError):
        read_documents([tmp_path / "missing"])


def test_encode_documents_round_trip():
    tok = tk.train_tokenizer("hello world hello there", 270)
    ids = encode_documents(tok, ["hello", "world"])
    parts = [tk.decode(tok, p) for p in np.split(ids, np.where(ids == tk.EOT)[0])]
    assert parts[0] == "hello"
    assert tk.decode(tok, ids[ids != tk.EOT]) == "helloworld"


def test_cache_round_trip(tmp_path):
    ds = pack_corpus(np.arange(1000) % 97, 16)
    path = tmp_path / "x.pack"
    save_packed(ds, path)
    raw = path.read_bytes()
    assert raw[:8] == b"FFNPACK\x00"
    assert len(raw) == 20 + 4 * ds.rows.size
    back = load_packed(path, "test")
    np.testing.assert_array_equal(back.rows, ds.rows)
    assert back.seq_len == 16 and back.split == "test"


@pytest.mark.parametrize("mutate", [lambda r: r[:10], lambda r: b"X" + r[1:], lambda r: r[:-4],
                                    lambda r: r[:8] + b"\x07" + r[9:]])
def test_cache_corruption_rejected(tmp_path, mutate):
    path = tmp_path / "x.pack"
    save_packed(pack_corpus(np.arange(100), 8), path)
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(ValueError):
        load_packed(path)
