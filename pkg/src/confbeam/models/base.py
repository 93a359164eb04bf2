"""The autoregressive model interface and model-agnostic helpers."""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from typing import Sequence as SequenceT

import numpy as np

from confbeam.seqcore import Sequence, TokenAlphabet, is_acceptable

NEG_INF = float("-inf")
DISTRIBUTION_ATOL = 1e-9


class MissingEntryError(KeyError):
    """A model was queried at a (condition, prefix) it has no distribution for."""


class EnumerationGuardError(ValueError):
    """Exhaustive enumeration would exceed the configured leaf budget."""


def derive_rng(master_seed: int, *keys: int) -> np.random.Generator:
    """Child generator for ``(master_seed, *keys)``; distinct keys give independent streams."""
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in keys)))


def stable_seed(*parts) -> int:
    """64-bit seed hashed from the ``repr`` of ``parts``, stable across processes."""
    h = hashlib.blake2b(repr(parts).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def take(conditions, idx) -> object:
    """Index ``conditions`` (ndarray or list) by an integer array."""
    if isinstance(conditions, np.ndarray):
        return conditions[idx]
    return [conditions[int(i)] for i in np.asarray(idx).ravel()]


class ArsModel(ABC):
    """Next-token distributions over ``A ∪ {terminator}``, extended with padding.

    Subclasses implement :meth:`_log_probs` for prefixes that have not yet
    emitted the terminator.  Once the terminator appears the distribution is
    a point mass on padding, which this base class handles.

    Returned arrays have ``alphabet.size`` entries indexed by token id.
    """

    alphabet: TokenAlphabet

    @abstractmethod
    def _log_probs(self, condition, prefix: tuple[int, ...]) -> np.ndarray:
        ...

    def padding_row(self) -> np.ndarray:
        row = np.full(self.alphabet.size, NEG_INF)
        row[self.alphabet.padding] = 0.0
        return row

    def next_token_log_probs(self, condition, prefix: SequenceT[int] = ()) -> np.ndarray:
        prefix = tuple(int(t) for t in prefix)
        if self.alphabet.terminator in prefix:
            return self.padding_row()
        return self._log_probs(condition, prefix)

    def batch_next_log_probs(self, conditions, prefixes: np.ndarray) -> np.ndarray:
        """Row ``i`` is ``next_token_log_probs(conditions[i], prefixes[i])``."""
        prefixes = np.asarray(prefixes, dtype=np.int64)
        n = prefixes.shape[0]
        out = np.empty((n, self.alphabet.size))
        for i in range(n):
            out[i] = self.next_token_log_probs(take(conditions, [i])[0], prefixes[i])
        return out

    def token_log_probs(self, conditions, tokens: np.ndarray) -> np.ndarray:
        """Per-step log-probability of each token given its prefix.

        Padding after the terminator contributes exactly zero.
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        n, L = tokens.shape
        out = np.empty((n, L))
        rows = np.arange(n)
        for l in range(L):
            lp = self.batch_next_log_probs(conditions, tokens[:, :l])
            out[:, l] = lp[rows, tokens[:, l]]
        return out


def check_distribution(log_probs: np.ndarray, atol: float = DISTRIBUTION_ATOL) -> None:
    total = float(np.exp(np.asarray(log_probs, dtype=float)).sum())
    if abs(total - 1.0) > atol:
        raise ValueError(f"next-token distribution sums to {total!r}, not 1")


def sequence_log_prob(model: ArsModel, condition, seq) -> float:
    """Sum of per-step log-probabilities; padding steps contribute zero."""
    tokens = tuple(seq.tokens) if isinstance(seq, Sequence) else tuple(seq)
    alphabet = model.alphabet
    bad = [t for t in tokens if not alphabet.is_token(t)]
    if bad:
        raise ValueError(f"tokens {bad} are not in the alphabet")
    if not is_acceptable(tokens, len(tokens), alphabet):
        raise ValueError(f"sequence {tokens} is not acceptable")
    total = 0.0
    for l, t in enumerate(tokens):
        total += float(model.next_token_log_probs(condition, tokens[:l])[t])
    return total


def sample_sequences(model: ArsModel, conditions, rng: np.random.Generator, max_len: int) -> np.ndarray:
    """Ancestral samples, one per condition, padded to ``max_len``.

    Rows that have not terminated after ``max_len`` steps are returned
    unterminated.
    """
    n = len(conditions)
    alphabet = model.alphabet
    tokens = np.full((n, max_len), alphabet.padding, dtype=np.int64)
    for l in range(max_len):
        p = np.exp(model.batch_next_log_probs(conditions, tokens[:, :l]))
        cdf = np.cumsum(p, axis=1)
        u = rng.random(n) * cdf[:, -1]
        tokens[:, l] = np.argmax(cdf > u[:, None], axis=1)
    return tokens


def enumerate_support(model: ArsModel, condition, L: int, max_leaves: int = 10**7) -> list[tuple[Sequence, float]]:
    """Every acceptable length-``L`` sequence with non-zero probability.

    Terminated sequences are padded to ``L``; sequences still live at
    ``L`` are returned unterminated.  Log-probabilities are accumulated
    left to right, the same order the decoders use.
    """
    alphabet = model.alphabet
    n_ext = len(alphabet.extended)
    if n_ext ** L > max_leaves:
        raise EnumerationGuardError(f"(|A|+1)^L = {n_ext}^{L} exceeds the guard of {max_leaves} leaves")
    out: list[tuple[Sequence, float]] = []

    def walk(prefix: tuple[int, ...], logp: float):
        row = model.next_token_log_probs(condition, prefix)
        for t in alphabet.extended:
            lp = float(row[t])
            if lp == NEG_INF:
                continue
            ext = prefix + (t,)
            if t == alphabet.terminator:
                out.append((alphabet.sequence(ext + (alphabet.padding,) * (L - len(ext))), logp + lp))
            elif len(ext) == L:
                out.append((alphabet.sequence(ext), logp + lp))
            else:
                walk(ext, logp + lp)

    walk((), 0.0)
    return out
