"""Tokens, padded sequences and length-normalized scores.

Token ids are small non-negative integers.  The base alphabet occupies the
lowest ids, followed by the terminator and the padding token, which is the
layout produced by :meth:`TokenAlphabet.from_vocab`.  Every array indexed
"per vocabulary entry" in this package has ``alphabet.size`` entries.

A length-``L`` sequence is *acceptable* when it reads
``a_1 ... a_k [terminator] pad ... pad`` with every ``a_i`` in the base
alphabet.  Padding is emitted with probability one after the terminator, so
it never changes a sequence's log-probability and is excluded from its
length.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence as SequenceT

import numpy as np

SCORE_CONVENTIONS = ("log", "prob")


@dataclass(frozen=True)
class TokenAlphabet:
    """Base alphabet plus the distinguished terminator and padding ids."""

    base_tokens: tuple[int, ...]
    terminator: int
    padding: int
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        base = tuple(int(t) for t in self.base_tokens)
        object.__setattr__(self, "base_tokens", base)
        if not base:
            raise ValueError("base alphabet must be non-empty")
        if len(set(base)) != len(base):
            raise ValueError("base alphabet contains duplicate ids")
        if min(base) < 0 or self.terminator < 0 or self.padding < 0:
            raise ValueError("token ids must be non-negative")
        if self.terminator in base or self.padding in base:
            raise ValueError("terminator and padding must lie outside the base alphabet")
        if self.terminator == self.padding:
            raise ValueError("terminator and padding must differ")
        if self.names is not None:
            names = tuple(self.names)
            object.__setattr__(self, "names", names)
            if len(names) != self.size:
                raise ValueError(f"expected {self.size} token names, got {len(names)}")
            if len(set(names)) != len(names):
                raise ValueError("token names must be distinct")

    @classmethod
    def from_size(cls, n_base: int, names: SequenceT[str] | None = None) -> "TokenAlphabet":
        """Alphabet with base ids ``0..n_base-1``, terminator ``n_base``, padding ``n_base+1``."""
        return cls(tuple(range(n_base)), n_base, n_base + 1, None if names is None else tuple(names))

    @classmethod
    def from_vocab(cls, vocab: dict) -> "TokenAlphabet":
        """Build from ``{"base": [...], "terminator": str, "padding": str}``; ids follow list position."""
        try:
            base = list(vocab["base"])
            names = base + [vocab["terminator"], vocab["padding"]]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed vocabulary object: {vocab!r}") from exc
        return cls.from_size(len(base), names=[str(n) for n in names])

    def to_vocab(self) -> dict:
        names = self.token_names()
        return {
            "base": [names[t] for t in self.base_tokens],
            "terminator": names[self.terminator],
            "padding": names[self.padding],
        }

    @property
    def size(self) -> int:
        return max(max(self.base_tokens), self.terminator, self.padding) + 1

    @property
    def extended(self) -> tuple[int, ...]:
        """Tokens a live hypothesis may emit next (base plus terminator), by increasing id."""
        return tuple(sorted(self.base_tokens + (self.terminator,)))

    def token_names(self) -> list[str]:
        if self.names is not None:
            return list(self.names)
        names = [f"<unused:{i}>" for i in range(self.size)]
        for t in self.base_tokens:
            names[t] = str(t)
        names[self.terminator] = "</s>"
        names[self.padding] = "<pad>"
        return names

    def encode(self, names: Iterable[str]) -> tuple[int, ...]:
        index = {n: i for i, n in enumerate(self.token_names())}
        try:
            return tuple(index[n] for n in names)
        except KeyError as exc:
            raise ValueError(f"unknown token {exc.args[0]!r}") from None

    def decode(self, tokens: Iterable[int]) -> list[str]:
        names = self.token_names()
        return [names[t] for t in tokens]

    def is_token(self, t: int) -> bool:
        return t in self.base_tokens or t == self.terminator or t == self.padding

    def sequence(self, tokens: Iterable[int], condition_id=None) -> "Sequence":
        return Sequence(tuple(int(t) for t in tokens), condition_id, pad=self.padding)


def load_vocab(path) -> TokenAlphabet:
    with open(path, encoding="utf-8") as f:
        return TokenAlphabet.from_vocab(json.load(f))


def save_vocab(alphabet: TokenAlphabet, path) -> None:
    Path(path).write_text(json.dumps(alphabet.to_vocab()) + "\n", encoding="utf-8")


@dataclass(frozen=True, eq=False)
class Sequence:
    """Token list answering the input identified by ``condition_id``.

    Equality and hashing ignore trailing padding (when the padding id is
    known) and the condition id.
    """

    tokens: tuple[int, ...]
    condition_id: object = None
    pad: int | None = field(default=None, repr=False)

    def content(self) -> tuple[int, ...]:
        return strip_padding(self.tokens, self.pad)

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other):
        if not isinstance(other, Sequence):
            return NotImplemented
        pad = self.pad if self.pad is not None else other.pad
        return strip_padding(self.tokens, pad) == strip_padding(other.tokens, pad)

    def __hash__(self):
        return hash(self.content())


@dataclass(frozen=True)
class ScoredSequence:
    """A sequence with its model log-probability and length-normalized score."""

    sequence: Sequence
    log_prob: float
    content_length: int
    normalized_score: float

    def __post_init__(self):
        if self.content_length < 1:
            raise ValueError("content_length must be >= 1")

    @property
    def tokens(self) -> tuple[int, ...]:
        return self.sequence.tokens


def strip_padding(tokens: SequenceT[int], pad: int | None) -> tuple[int, ...]:
    tokens = tuple(tokens)
    if pad is None:
        return tokens
    end = len(tokens)
    while end and tokens[end - 1] == pad:
        end -= 1
    return tokens[:end]


def content_length(tokens: SequenceT[int], alphabet: TokenAlphabet) -> int:
    """Number of tokens up to and including the terminator (padding excluded)."""
    return sum(1 for t in tokens if t != alphabet.padding)


def is_terminated(tokens: SequenceT[int], alphabet: TokenAlphabet) -> bool:
    tokens = tuple(tokens)
    if tokens.count(alphabet.terminator) != 1:
        return False
    i = tokens.index(alphabet.terminator)
    return all(t == alphabet.padding for t in tokens[i + 1:])


def _tokens_of(seq) -> tuple[int, ...]:
    return tuple(seq.tokens) if isinstance(seq, Sequence) else tuple(seq)


def is_acceptable(seq, L: int, alphabet: TokenAlphabet) -> bool:
    """True iff ``seq`` has exactly ``L`` tokens and reads ``a_1..a_k [term] pad..pad``."""
    tokens = _tokens_of(seq)
    if len(tokens) != L:
        return False
    base = set(alphabet.base_tokens)
    i = 0
    while i < L and tokens[i] in base:
        i += 1
    if i < L and tokens[i] == alphabet.terminator:
        i += 1
    # padding is only legal after the terminator
    if i < L and (i == 0 or tokens[i - 1] != alphabet.terminator):
        return False
    return all(t == alphabet.padding for t in tokens[i:])


def truncate(seq, l: int, alphabet: TokenAlphabet):
    """First ``l`` tokens of ``seq``, right-padded after the terminator when shorter.

    Returns the same kind of object it was given (``Sequence`` or tuple).
    """
    if l < 1:
        raise ValueError("truncation length must be >= 1")
    tokens = _tokens_of(seq)
    if len(tokens) < l:
        if not tokens or alphabet.terminator not in tokens:
            raise ValueError("cannot pad an unterminated sequence")
        tokens = tokens + (alphabet.padding,) * (l - len(tokens))
    out = tokens[:l]
    if isinstance(seq, Sequence):
        return Sequence(out, seq.condition_id, pad=alphabet.padding)
    return out


def pad_to(tokens: SequenceT[int], L: int, alphabet: TokenAlphabet) -> tuple[int, ...]:
    tokens = tuple(tokens)
    if len(tokens) > L:
        raise ValueError(f"sequence of length {len(tokens)} exceeds {L}")
    return tokens + (alphabet.padding,) * (L - len(tokens))


def normalized_score(log_prob: float, content_length: int, convention: str = "log") -> float:
    """Length-normalized confidence score.

    ``"log"`` gives ``log_prob / content_length``; ``"prob"`` gives
    ``exp(log_prob) / content_length``.  Both rank identically among
    sequences of a fixed length.
    """
    if content_length < 1:
        raise ValueError("content_length must be >= 1")
    if convention == "log":
        return log_prob / content_length
    if convention == "prob":
        # np.exp keeps scalar and vectorized scores bit-identical
        return float(np.exp(log_prob)) / content_length
    raise ValueError(f"unknown score convention {convention!r}; expected one of {SCORE_CONVENTIONS}")


def normalized_scores(log_probs, lengths, convention: str = "log") -> np.ndarray:
    """Vectorized :func:`normalized_score`; lengths must be >= 1 elementwise."""
    log_probs = np.asarray(log_probs, dtype=float)
    lengths = np.asarray(lengths)
    if np.any(lengths < 1):
        raise ValueError("content lengths must be >= 1")
    if convention == "log":
        return log_probs / lengths
    if convention == "prob":
        return np.exp(log_probs) / lengths
    raise ValueError(f"unknown score convention {convention!r}; expected one of {SCORE_CONVENTIONS}")


def truncated_scores(step_log_probs: np.ndarray, tokens: np.ndarray, alphabet: TokenAlphabet,
                     convention: str = "log") -> np.ndarray:
    """Scores of every prefix truncation.

    ``step_log_probs[i, l]`` is the log-probability of ``tokens[i, l]`` given
    its prefix (zero on padding).  Entry ``[i, l]`` of the result is the
    normalized score of the length-``l+1`` truncation of sequence ``i``.
    """
    step_log_probs = np.asarray(step_log_probs, dtype=float)
    tokens = np.asarray(tokens)
    cum = np.cumsum(step_log_probs, axis=1)
    lengths = np.cumsum(tokens != alphabet.padding, axis=1)
    return normalized_scores(cum, lengths, convention)

