from hypothesis import given, strategies as st

from emofuse.tasks import EMOTIONS, build_tokenizer
from emofuse.tokenizer import WORD_OFFSET, Tokenizer

TOK = build_tokenizer()


@given(st.text(max_size=40))
def test_round_trip_normalises_whitespace(text):
    assert TOK.decode(TOK.encode(text)) == " ".join(text.split())


def test_known_words_are_single_ids():
    for e in EMOTIONS:
        ids = TOK.encode(e)
        assert ids == [TOK.word_id(e)] and ids[0] >= WORD_OFFSET


def test_unknown_word_spelled_in_bytes():
    tok = Tokenizer(["hello"], vocab_size=300)
    ids = tok.encode("hello zq")
    assert ids[0] == tok.word_id("hello")
    assert ids[1:] == [4 + ord("z"), 4 + ord("q"), tok.eow_id]
    assert tok.decode(ids) == "hello zq"


def test_vocab_capacity_enforced():
    import pytest
    with pytest.raises(ValueError):
        Tokenizer([f"w{i}" for i in range(300)], vocab_size=512)
    assert len(TOK) == 512 and max(TOK.word_to_id.values()) < 512
