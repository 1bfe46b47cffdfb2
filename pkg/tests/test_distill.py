import numpy as np
import pytest

from speclab import ModelConfig, init_model
from speclab.distill import (extract_sparse_logits, read_sparse_dataset,
                             top_k_entries, write_sparse_dataset)
from speclab.errors import ConfigError
from speclab.model import forward


def test_top_k_hand_example():
    assert top_k_entries(np.array([1.0, 3.0, 2.0]), 2) == ((1, 3.0), (2, 2.0))


def test_top_k_tie_break_smaller_id():
    assert top_k_entries(np.array([5.0, 7.0, 7.0, 1.0]), 2) == ((1, 7.0), (2, 7.0))


def test_k_equals_vocab_is_argsort():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=12)
    entries = top_k_entries(logits, 12)
    ids = [i for i, _ in entries]
    assert ids == list(np.argsort(-logits, kind="stable"))


def test_k_validation():
    with pytest.raises(ConfigError):
        top_k_entries(np.zeros(4), 0)
    with pytest.raises(ConfigError):
        top_k_entries(np.zeros(4), 5)


@pytest.fixture
def teacher():
    cfg = ModelConfig(hidden_size=8, intermediate_size=16, n_layers=1,
                      n_heads=2, n_kv_heads=2, vocab_size=30, max_seq_len=32)
    return init_model(cfg, seed=9)


def test_extraction_matches_forward(teacher):
    seq = [1, 4, 9, 2, 7]
    (tokens, records), = list(extract_sparse_logits(teacher, [seq], k=5))
    assert tokens == seq
    assert len(records) == len(seq) - 1
    logits, _ = forward(teacher, seq)
    for rec in records:
        assert rec.entries == top_k_entries(logits[rec.position], 5)


def test_dataset_round_trip_bit_exact(tmp_path, teacher):
    rng = np.random.default_rng(1)
    seqs = [rng.integers(0, 30, size=int(rng.integers(3, 12))).tolist()
            for _ in range(6)]
    path = tmp_path / "kd.sfkd"
    write_sparse_dataset(path, extract_sparse_logits(teacher, seqs, k=4),
                         k=4, vocab_size=30)
    k, vocab, items = read_sparse_dataset(path)
    assert (k, vocab) == (4, 30)
    assert [t for t, _ in items] == seqs
    fresh = list(extract_sparse_logits(teacher, seqs, k=4))
    for (_, got), (_, want) in zip(items, fresh):
        assert got == want
    # writing what was read reproduces the same bytes
    path2 = tmp_path / "kd2.sfkd"
    write_sparse_dataset(path2, items, k=4, vocab_size=30)
    assert path.read_bytes() == path2.read_bytes()


def test_storage_scales_with_k_not_vocab(tmp_path, teacher):
    """Per-position record payload shrinks by vocab/k versus dense records."""
    vocab = teacher.config.vocab_size
    seq = np.random.default_rng(2).integers(0, vocab, size=101).tolist()
    small = tmp_path / "k4.sfkd"
    dense = tmp_path / "kdense.sfkd"
    write_sparse_dataset(small, extract_sparse_logits(teacher, [seq], k=4),
                         k=4, vocab_size=vocab)
    write_sparse_dataset(dense, extract_sparse_logits(teacher, [seq], k=vocab),
                         k=vocab, vocab_size=vocab)
    overhead = 16 + 4 + 4 * len(seq)  # header, length field, token ids
    positions = len(seq) - 1
    small_per_pos = (small.stat().st_size - overhead) / positions
    dense_per_pos = (dense.stat().st_size - overhead) / positions
    assert dense_per_pos / small_per_pos >= vocab / 4
