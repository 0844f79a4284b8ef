"""Tokenizer, vocabulary, and input sequence construction."""

from __future__ import annotations

import random

import pytest

from schemadst.errors import ConfigError, DataError
from schemadst.text import (
    CLS,
    PAD,
    RESERVED,
    SEP,
    UNK,
    Vocab,
    build_sequence,
    build_vocab,
    tokenize,
)


def test_build_vocab_contains_words_and_reserved():
    vocab = build_vocab(["a b", "a"], min_count=1)
    assert "a" in vocab and "b" in vocab
    assert vocab.tokens()[:4] == list(RESERVED)
    assert vocab.id_of("[PAD]") == PAD and vocab.id_of("[CLS]") == CLS


def test_build_vocab_rejects_empty_corpus():
    with pytest.raises(ConfigError):
        build_vocab([])


def test_unseen_word_decomposes_to_characters_not_unk():
    vocab = build_vocab(["cat dog"], min_count=1)
    ids = vocab.encode_token("god")  # unseen word, but all chars covered
    assert UNK not in ids
    assert len(ids) == 3


def test_unseen_character_falls_back_to_unk():
    vocab = build_vocab(["abc"], min_count=1)
    assert vocab.encode_token("q") == [UNK]


def test_vocab_deterministic_across_builds():
    corpus = ["i want thai food", "thai food is nice", "i am here"]
    assert build_vocab(corpus).tokens() == build_vocab(corpus).tokens()


def test_min_count_filters_words_but_chars_remain():
    vocab = build_vocab(["rare common common"], min_count=2)
    assert "common" in vocab
    assert "rare" not in vocab
    assert UNK not in vocab.encode_token("rare")  # char fallback still covers it


def test_vocab_save_load_round_trip(tmp_path):
    vocab = build_vocab(["hello world , again !"])
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    again = Vocab.load(path)
    assert again.tokens() == vocab.tokens()
    # line number equals id
    lines = path.read_text().splitlines()
    assert lines[vocab.id_of("hello")] == "hello"


def test_tokenize_offsets_recover_source_text():
    text = "Find me SAN Jose, please!"
    for token in tokenize(text):
        assert text[token.start:token.end].lower() == token.text


def test_tokenize_offsets_round_trip_random_fixtures():
    rng = random.Random(0)
    words = ["alpha", "Beta", "GAMMA-7", "x", "42", "hey!", "a,b"]
    for _ in range(100):
        text = " ".join(rng.choice(words) for _ in range(rng.randint(1, 12)))
        spans = [(t.start, t.end) for t in tokenize(text)]
        assert spans == sorted(spans)
        for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
            assert e1 <= s2  # non-overlapping, ordered
        for t in tokenize(text):
            assert text[t.start:t.end].lower() == t.text


@pytest.fixture()
def vocab():
    return build_vocab(["hi a b c d e f g h i j k l m n o p q r s t u v w x y z"])


def test_single_sentence_layout(vocab):
    seq = build_sequence(vocab, "hi", None, 16)
    assert seq.token_ids[0] == CLS and seq.token_ids[-1] == SEP
    assert seq.segment_ids == (0, 0, 0)
    assert seq.position_ids == (0, 1, 2)
    assert seq.attention_mask == (1, 1, 1)


def test_pair_layout_segments(vocab):
    seq = build_sequence(vocab, "a b", "c", 16)
    assert seq.segment_ids == (0, 0, 0, 0, 1, 1)
    assert seq.token_ids.count(SEP) == 2


def test_truncation_trims_longer_sentence_first(vocab):
    s1 = " ".join(["a"] * 100)
    s2 = " ".join(["b"] * 100)
    seq = build_sequence(vocab, s1, s2, 64)
    assert len(seq) == 64
    assert seq.token_ids.count(SEP) == 2
    a_id, b_id = vocab.id_of("a"), vocab.id_of("b")
    n_a = seq.token_ids.count(a_id)
    n_b = seq.token_ids.count(b_id)
    assert n_a + n_b == 61
    assert abs(n_a - n_b) <= 1  # balanced: always trims the currently longer side


def test_truncation_oracle_longest_first(vocab):
    # independent re-computation of the trimming loop
    for len1, len2, max_len in [(10, 3, 8), (3, 10, 8), (7, 7, 9), (5, 0, 4)]:
        s1 = " ".join(["a"] * len1)
        s2 = " ".join(["b"] * len2) if len2 else None
        budget = max_len - (3 if s2 is not None else 2)
        want1, want2 = len1, len2
        if s2 is None:
            want1 = min(want1, budget)
        else:
            while want1 + want2 > budget:
                if want1 >= want2:
                    want1 -= 1
                else:
                    want2 -= 1
        seq = build_sequence(vocab, s1, s2, max_len)
        assert seq.token_ids.count(vocab.id_of("a")) == want1
        if s2 is not None:
            assert seq.token_ids.count(vocab.id_of("b")) == want2


def test_max_len_too_small_is_config_error(vocab):
    with pytest.raises(ConfigError):
        build_sequence(vocab, "a", "b", 3)


def test_empty_first_sentence_requires_flag(vocab):
    with pytest.raises(DataError):
        build_sequence(vocab, "", "b", 16)
    seq = build_sequence(vocab, "", "b", 16, allow_empty_first=True)
    assert seq.token_ids[0] == CLS
    assert seq.token_ids[1] == SEP  # empty first sentence keeps its separator
    assert seq.segment_ids == (0, 0, 1, 1)
