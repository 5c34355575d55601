import pytest

from dcvd.tokenization import (
    CLS_ID,
    PAD_ID,
    UNK_ID,
    CodeTokenizer,
    TokenizationError,
    Vocab,
    lex,
    map_tokens_to_lines,
)


def test_lex_keeps_offsets():
    src = "if (a->b >= 10) x += 1;"
    for tok, s, e in lex(src):
        assert src[s:e] == tok
    assert [t for t, _, _ in lex(src)] == ["if", "(", "a", "->", "b", ">=", "10", ")", "x", "+=", "1", ";"]


def test_two_line_source():
    src = "int a;\nreturn a;"
    tok = CodeTokenizer(Vocab.build([[t for t, _, _ in lex(src)]]))
    enc = tok.encode(src)
    assert map_tokens_to_lines(src, enc.offsets) == [-1, 0, 0, 0, 1, 1, 1]


def test_spanning_token_takes_start_line():
    src = "a\nb"
    assert map_tokens_to_lines(src, [(0, 3)]) == [0]


def test_special_token_has_no_line():
    src = "x;"
    enc = CodeTokenizer(Vocab()).encode(src)
    assert enc.ids[0] == CLS_ID
    assert map_tokens_to_lines(src, enc.offsets)[0] == -1


def test_offset_outside_source():
    with pytest.raises(TokenizationError):
        map_tokens_to_lines("ab", [(1, 5)])


def test_truncation_keeps_head():
    src = " ".join(f"t{i}" for i in range(20))
    enc = CodeTokenizer(Vocab.build([[f"t{i}" for i in range(20)]]), max_len=8).encode(src)
    assert len(enc) == 8 and enc.n_truncated == 13
    assert enc.offsets[1] == (0, 2)


def test_vocab_is_order_independent_and_has_unk():
    a = Vocab.build([["x", "y", "y"], ["z"]])
    b = Vocab.build([["z"], ["y", "x", "y"]])
    assert a.to_list() == b.to_list()
    assert a["never-seen"] == UNK_ID and a["[PAD]"] == PAD_ID
    assert Vocab.from_list(a.to_list()).to_list() == a.to_list()
