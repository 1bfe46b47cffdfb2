import pytest
from hypothesis import given, strategies as st

from speclab.errors import VocabMismatchError
from speclab.tokenizer import BYTE_VOCAB, ByteTokenizer, ensure_shared_vocab


def test_vocab_layout():
    tok = ByteTokenizer()
    assert tok.vocab_size == 264
    assert len(tok.special_tokens) == 8
    assert tok.pad_id == 256 and tok.eos_id == 258


@given(st.binary(max_size=200))
def test_round_trip_arbitrary_bytes(data):
    tok = ByteTokenizer()
    assert tok.decode_bytes(tok.encode(data)) == data


def test_encode_utf8_strings():
    tok = ByteTokenizer()
    s = "héllo, wörld"
    assert tok.decode(tok.encode(s)) == s


def test_decode_drops_specials():
    tok = ByteTokenizer()
    ids = [tok.bos_id] + tok.encode(b"ab") + [tok.eos_id, tok.pad_id]
    assert tok.decode_bytes(ids) == b"ab"


def test_special_ids_outside_byte_range():
    tok = ByteTokenizer()
    assert all(i >= BYTE_VOCAB for i in tok.special_tokens.values())
    assert tok.is_special(tok.resp_id)
    assert not tok.is_special(65)


def test_shared_vocab_check():
    a, b = ByteTokenizer(), ByteTokenizer()
    ensure_shared_vocab(a, b)
    assert a == b
    b.special_tokens = dict(b.special_tokens)
    b.special_tokens["<eos>"] = 259  # perturbed id map
    with pytest.raises(VocabMismatchError):
        ensure_shared_vocab(a, b)
