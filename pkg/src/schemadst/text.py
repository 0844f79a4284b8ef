"""Word-level tokenizer with character fallback, and encoder input sequences.

Sequences follow the [CLS] s1 [SEP] (s2 [SEP]) layout with segment ids 0 for
everything through the first separator and 1 afterwards. Token offsets are
character spans into the original (uncased) source sentence, so any token's
surface form can be recovered exactly by slicing.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import ConfigError, DataError

PAD, UNK, CLS, SEP = 0, 1, 2, 3
RESERVED = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

# source tags for sequence positions
SRC_SPECIAL, SRC_FIRST, SRC_SECOND = 0, 1, 2
_NO_SPAN = (-1, -1)


@dataclass(frozen=True)
class Token:
    """One surface token: lowercased text plus its span in the source string."""

    text: str
    start: int
    end: int


def tokenize(text: str) -> list[Token]:
    return [Token(m.group().lower(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


class Vocab:
    """Bijective token<->id map with fixed reserved ids 0..3."""

    def __init__(self, tokens: Iterable[str]):
        self._id_of: dict[str, int] = {}
        for tok in tokens:
            if tok in self._id_of:
                raise ConfigError(f"duplicate vocab token {tok!r}")
            self._id_of[tok] = len(self._id_of)
        for i, tok in enumerate(RESERVED):
            if self._id_of.get(tok) != i:
                raise ConfigError(f"reserved token {tok} must have id {i}")

    def __len__(self) -> int:
        return len(self._id_of)

    def __contains__(self, token: str) -> bool:
        return token in self._id_of

    def id_of(self, token: str) -> int:
        return self._id_of.get(token, UNK)

    def tokens(self) -> list[str]:
        return list(self._id_of)

    def encode_token(self, token: str) -> list[int]:
        """Map one surface token to ids, decomposing unknown words to chars."""
        if token in self._id_of:
            return [self._id_of[token]]
        return [self._id_of.get(ch, UNK) for ch in token]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self._id_of) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines)


def build_vocab(corpus: Iterable[str], min_count: int = 1) -> Vocab:
    """Frequency-filtered word vocabulary plus single-character fallbacks.

    Deterministic: words are ordered by descending count then spelling;
    every character seen in the corpus is included regardless of count so
    unseen words always decompose without hitting [UNK].
    """
    counts: Counter[str] = Counter()
    chars: set[str] = set()
    empty = True
    for text in corpus:
        empty = False
        for tok in tokenize(text):
            counts[tok.text] += 1
            chars.update(tok.text)
    if empty:
        raise ConfigError("cannot build a vocabulary from an empty corpus")

    words = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    seen = set(words)
    fallback = sorted(ch for ch in chars if ch not in seen)
    return Vocab(list(RESERVED) + words + fallback)


@dataclass(frozen=True)
class InputSequence:
    """Encoder-ready id lists, all of equal length.

    token_offsets holds each position's character span into its source
    sentence ((-1, -1) for special tokens); sources tags each position as
    special, first-sentence or second-sentence.
    """

    token_ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    position_ids: tuple[int, ...]
    attention_mask: tuple[int, ...]
    token_offsets: tuple[tuple[int, int], ...]
    sources: tuple[int, ...]

    def __post_init__(self):
        n = len(self.token_ids)
        for field in (self.segment_ids, self.position_ids, self.attention_mask,
                      self.token_offsets, self.sources):
            if len(field) != n:
                raise DataError("input sequence id lists have unequal lengths")

    def __len__(self) -> int:
        return len(self.token_ids)


def _encode_sentence(vocab: Vocab, text: str) -> list[tuple[int, tuple[int, int]]]:
    """Flatten a sentence to (id, char span) pairs, chars for unknown words."""
    out: list[tuple[int, tuple[int, int]]] = []
    for tok in tokenize(text):
        if tok.text in vocab:
            out.append((vocab.id_of(tok.text), (tok.start, tok.end)))
        else:
            for i, ch in enumerate(tok.text):
                out.append((vocab.id_of(ch), (tok.start + i, tok.start + i + 1)))
    return out


def build_sequence(
    vocab: Vocab,
    s1: str,
    s2: str | None,
    max_len: int,
    allow_empty_first: bool = False,
) -> InputSequence:
    """[CLS] + s1 + [SEP] (+ s2 + [SEP]), truncated to max_len.

    Truncation removes tokens from the end of whichever sentence is
    currently longer (ties trim the first), keeping both separators.
    """
    if max_len < 4:
        raise ConfigError(f"max_len must be at least 4, got {max_len}")
    if not s1.strip() and not allow_empty_first:
        raise DataError("first sentence is empty")

    first = _encode_sentence(vocab, s1)
    second = _encode_sentence(vocab, s2) if s2 is not None else None

    n_special = 2 if second is None else 3
    budget = max_len - n_special
    if second is None:
        first = first[:budget]
    else:
        while len(first) + len(second) > budget:
            if len(first) >= len(second):
                first.pop()
            else:
                second.pop()

    ids = [CLS] + [i for i, _ in first] + [SEP]
    offsets = [_NO_SPAN] + [span for _, span in first] + [_NO_SPAN]
    sources = [SRC_SPECIAL] + [SRC_FIRST] * len(first) + [SRC_SPECIAL]
    segments = [0] * len(ids)
    if second is not None:
        ids += [i for i, _ in second] + [SEP]
        offsets += [span for _, span in second] + [_NO_SPAN]
        sources += [SRC_SECOND] * len(second) + [SRC_SPECIAL]
        segments += [1] * (len(second) + 1)

    n = len(ids)
    return InputSequence(
        token_ids=tuple(ids),
        segment_ids=tuple(segments),
        position_ids=tuple(range(n)),
        attention_mask=(1,) * n,
        token_offsets=tuple(offsets),
        sources=tuple(sources),
    )
