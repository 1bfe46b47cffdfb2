import numpy as np
import pytest

from speclab import ModelConfig, init_model
from speclab.checkpoint import load_checkpoint, save_checkpoint
from speclab.errors import ConfigError


def test_round_trip_bit_exact(tmp_path, tiny_state):
    path = tmp_path / "model.sfmd"
    save_checkpoint(tiny_state, path)
    loaded = load_checkpoint(path)
    assert loaded.config == tiny_state.config
    for name, t in tiny_state.tensors.items():
        assert loaded.tensors[name].dtype == np.float32
        assert np.array_equal(loaded.tensors[name], t)


def test_double_round_trip_identical_bytes(tmp_path, tiny_state):
    p1, p2 = tmp_path / "a.sfmd", tmp_path / "b.sfmd"
    save_checkpoint(tiny_state, p1)
    save_checkpoint(load_checkpoint(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_tied_model_round_trip(tmp_path):
    cfg = ModelConfig(hidden_size=8, intermediate_size=16, n_layers=1,
                      n_heads=2, n_kv_heads=1, vocab_size=30, max_seq_len=8,
                      tie_embeddings=True)
    st = init_model(cfg, seed=3)
    path = tmp_path / "tied.sfmd"
    save_checkpoint(st, path)
    loaded = load_checkpoint(path)
    assert "head" not in loaded.tensors
    assert np.array_equal(loaded.tensors["embed"], st.tensors["embed"])


def test_rejects_garbage(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ConfigError):
        load_checkpoint(path)
