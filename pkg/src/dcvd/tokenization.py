"""Offset-preserving lexer and vocabulary shared by code and explanations."""

from __future__ import annotations

import bisect
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = range(4)

_TOKEN_RE = re.compile(
    r"""
      "(?:\\.|[^"\\\n])*"?            # string literal (may be unterminated)
    | '(?:\\.|[^'\\\n])*'?            # char literal
    | [A-Za-z_][A-Za-z0-9_]*          # identifier / keyword / word
    | 0[xX][0-9a-fA-F]+[uUlL]*        # hex
    | \d+(?:\.\d*)?(?:[eE][+-]?\d+)?[uUlLfF]*
    | <<=|>>=|->|\+\+|--|<<|>>|<=|>=|==|!=|&&|\|\||[-+*/%&|^]=
    | \S                              # any other single visible char
    """,
    re.VERBOSE,
)


class TokenizationError(ValueError):
    pass


def lex(text: str) -> list[tuple[str, int, int]]:
    """Split ``text`` into ``(lexeme, start, end)`` triples (character offsets)."""
    return [(m.group(0), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


class Vocab:
    def __init__(self, tokens: Sequence[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __getitem__(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    @classmethod
    def build(cls, streams: Iterable[Iterable[str]], min_freq: int = 1, max_size: int | None = None) -> "Vocab":
        counts: Counter[str] = Counter()
        for stream in streams:
            counts.update(stream)
        # sort by (-freq, token) so the table does not depend on input order
        ranked = sorted((t for t, c in counts.items() if c >= min_freq and t not in SPECIALS),
                        key=lambda t: (-counts[t], t))
        if max_size is not None:
            ranked = ranked[: max(0, max_size - len(SPECIALS))]
        return cls(ranked)

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: Sequence[str]) -> "Vocab":
        if tuple(itos[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary does not start with the reserved specials")
        return cls(itos[len(SPECIALS):])


@dataclass
class Encoding:
    ids: list[int]
    # (start, end) character span per position; None for special tokens
    offsets: list[tuple[int, int] | None]
    n_truncated: int = 0

    def __len__(self):
        return len(self.ids)


class CodeTokenizer:
    """Lexes text, prepends ``[CLS]`` and truncates to ``max_len`` keeping the head."""

    def __init__(self, vocab: Vocab, max_len: int = 512):
        if max_len < 2:
            raise ValueError("max_len must leave room for [CLS] and one token")
        self.vocab = vocab
        self.max_len = max_len

    def encode(self, text: str) -> Encoding:
        toks = lex(text)
        budget = self.max_len - 1
        dropped = max(0, len(toks) - budget)
        toks = toks[:budget]
        ids = [CLS_ID] + [self.vocab[t] for t, _, _ in toks]
        offsets: list[tuple[int, int] | None] = [None] + [(s, e) for _, s, e in toks]
        return Encoding(ids, offsets, dropped)


def map_tokens_to_lines(source: str, offsets: Sequence[tuple[int, int] | None]) -> list[int]:
    """Line index of each token's first character; ``-1`` for special/pad tokens."""
    breaks = [i for i, ch in enumerate(source) if ch == "\n"]
    out = []
    for off in offsets:
        if off is None:
            out.append(-1)
            continue
        start, end = off
        if start < 0 or end > len(source) or start > end:
            raise TokenizationError(f"token offset {off} outside source of length {len(source)}")
        out.append(bisect.bisect_left(breaks, start) if start < len(source) else len(breaks))
    return out
