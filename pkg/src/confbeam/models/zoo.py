"""Synthetic models whose next-token distributions are known exactly."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from confbeam.models.base import NEG_INF, ArsModel, MissingEntryError, check_distribution
from confbeam.seqcore import TokenAlphabet


class TabularModel(ArsModel):
    """Explicit table of next-token distributions keyed by ``(condition_id, prefix)``.

    Table values are probability vectors over the full vocabulary (padding
    must carry zero mass).  Queries at prefixes missing from the table
    raise :class:`MissingEntryError`.

    Examples
    --------
    >>> ab = TokenAlphabet.from_size(2)        # a=0, b=1, terminator=2, pad=3
    >>> m = TabularModel(ab, {
    ...     ("x", ()): [0.6, 0.4, 0.0, 0.0],
    ...     ("x", (0,)): [0.0, 0.1, 0.9, 0.0],
    ...     ("x", (1,)): [0.0, 0.0, 1.0, 0.0],
    ...     ("x", (0, 1)): [0.0, 0.0, 1.0, 0.0],
    ... }, max_depth=3)
    """

    def __init__(self, alphabet: TokenAlphabet, table: Mapping, max_depth: int):
        self.alphabet = alphabet
        self.max_depth = int(max_depth)
        self._table: dict[tuple, np.ndarray] = {}
        for (cid, prefix), probs in table.items():
            p = np.asarray(probs, dtype=float)
            if p.shape != (alphabet.size,):
                raise ValueError(f"entry {(cid, prefix)} has shape {p.shape}, expected ({alphabet.size},)")
            if np.any(p < 0) or p[alphabet.padding] != 0:
                raise ValueError(f"entry {(cid, prefix)} is not a valid pre-termination distribution")
            with np.errstate(divide="ignore"):
                lp = np.log(p)
            check_distribution(lp)
            self._table[(cid, tuple(int(t) for t in prefix))] = lp

    @property
    def conditions(self) -> list:
        return sorted({cid for cid, _ in self._table}, key=repr)

    def _log_probs(self, condition, prefix):
        try:
            return self._table[(condition, prefix)].copy()
        except KeyError:
            raise MissingEntryError(f"no distribution for condition {condition!r}, prefix {prefix}") from None

    def entries(self):
        return self._table.items()

    def batch_next_log_probs(self, conditions, prefixes):
        prefixes = np.asarray(prefixes, dtype=np.int64)
        term, pad_row = self.alphabet.terminator, self.padding_row()
        rows = []
        for c, p in zip(conditions, prefixes.tolist()):
            if term in p:
                rows.append(pad_row)
                continue
            try:
                rows.append(self._table[(c, tuple(p))])
            except KeyError:
                raise MissingEntryError(f"no distribution for condition {c!r}, prefix {tuple(p)}") from None
        return np.array(rows, dtype=float).reshape(prefixes.shape[0], self.alphabet.size)


def random_tabular_model(rng: np.random.Generator, n_base: int, max_depth: int, conditions=("x",),
                         zero_prob: float = 0.2, concentration: float = 1.0, min_len: int = 1) -> TabularModel:
    """Random tree of Dirichlet next-token distributions.

    Each extended token is zeroed with probability ``zero_prob`` (at least
    one survives).  The terminator is forced at depth ``max_depth`` so that
    every sequence terminates within ``max_depth`` tokens, and forbidden
    before position ``min_len``; ``min_len = max_depth`` makes every
    sequence exactly ``max_depth`` tokens long.
    """
    alphabet = TokenAlphabet.from_size(n_base)
    ext = np.array(alphabet.extended)
    table = {}
    for cid in conditions:
        frontier = [()]
        while frontier:
            prefix = frontier.pop()
            p = np.zeros(alphabet.size)
            if len(prefix) == max_depth - 1:
                p[alphabet.terminator] = 1.0
            else:
                keep = rng.random(len(ext)) >= zero_prob
                allowed = ext != alphabet.terminator if len(prefix) < min_len - 1 else np.ones(len(ext), bool)
                keep &= allowed
                if not keep.any():
                    keep[rng.choice(np.flatnonzero(allowed))] = True
                w = rng.dirichlet(np.full(int(keep.sum()), concentration))
                p[ext[keep]] = w
                p /= p.sum()
                frontier.extend(prefix + (int(t),) for t in ext[keep] if t != alphabet.terminator)
            table[(cid, prefix)] = p
    return TabularModel(alphabet, table, max_depth)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = np.max(z, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore"):
        s = z - m
    return s - np.log(np.sum(np.exp(s), axis=-1, keepdims=True))


class LogitChainModel(ArsModel):
    """First-order chain whose transition logits depend linearly on a real condition.

    At position ``l`` with previous token ``s`` (or a start state), the
    logits over ``A ∪ {terminator}`` are
    ``(bias[l, s] + weight[l, s] @ x) / temperature`` for condition
    vector ``x``.  The terminator is masked before position ``min_len - 1``
    and forced at position ``max_len - 1``, so all sequences have between
    ``min_len`` and ``max_len`` tokens including the terminator.

    Conditions drawn from a continuous law give almost surely distinct
    scores, which the exact (tie-free) coverage identities require.
    """

    def __init__(self, bias: np.ndarray, weight: np.ndarray, min_len: int = 1, temperature: float = 1.0):
        bias = np.asarray(bias, dtype=float)
        weight = np.asarray(weight, dtype=float)
        max_len, n_prev, n_out = bias.shape
        if n_prev != n_out or weight.shape[:3] != bias.shape:
            raise ValueError("bias must be (max_len, |A|+1, |A|+1) and weight (max_len, |A|+1, |A|+1, dim)")
        if not 1 <= min_len <= max_len:
            raise ValueError("need 1 <= min_len <= max_len")
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.alphabet = TokenAlphabet.from_size(n_out - 1)
        self.bias = bias
        self.weight = weight
        self.min_len = int(min_len)
        self.max_len = int(max_len)
        self.temperature = float(temperature)
        # additive mask over A ∪ {terminator}, per position
        term = self.alphabet.terminator
        self._mask = np.zeros((max_len, n_out))
        self._mask[: min_len - 1, term] = NEG_INF
        self._mask[max_len - 1, :term] = NEG_INF

    @classmethod
    def random(cls, seed: int, n_base: int = 3, max_len: int = 4, dim: int = 2, bias_scale: float = 1.0,
               weight_scale: float = 1.0, termination_bias: float = 0.0, min_len: int = 1,
               temperature: float = 1.0) -> "LogitChainModel":
        rng = np.random.default_rng(seed)
        n = n_base + 1
        bias = rng.normal(0.0, bias_scale, size=(max_len, n, n))
        bias[:, :, n_base] += termination_bias
        weight = rng.normal(0.0, weight_scale, size=(max_len, n, n, dim))
        return cls(bias, weight, min_len=min_len, temperature=temperature)

    @property
    def dim(self) -> int:
        return self.weight.shape[-1]

    def tempered(self, temperature: float) -> "LogitChainModel":
        return LogitChainModel(self.bias, self.weight, self.min_len, temperature)

    def _rows(self, x: np.ndarray, pos: int, prev: np.ndarray) -> np.ndarray:
        if pos >= self.max_len:
            raise ValueError(f"position {pos} is beyond max_len={self.max_len}")
        logits = self.bias[pos, prev] + np.einsum("nvd,nd->nv", self.weight[pos, prev], x)
        return _log_softmax(logits / self.temperature + self._mask[pos])

    def _log_probs(self, condition, prefix):
        x = np.asarray(condition, dtype=float).reshape(1, -1)
        prev = np.array([prefix[-1] if prefix else self.alphabet.terminator])
        out = np.full(self.alphabet.size, NEG_INF)
        out[: self.alphabet.padding] = self._rows(x, len(prefix), prev)[0]
        return out

    def batch_next_log_probs(self, conditions, prefixes):
        x = np.asarray(conditions, dtype=float).reshape(len(conditions), -1)
        prefixes = np.asarray(prefixes, dtype=np.int64)
        n, pos = prefixes.shape[0], prefixes.shape[1]
        term, pad = self.alphabet.terminator, self.alphabet.padding
        out = np.full((n, self.alphabet.size), NEG_INF)
        done = (prefixes == term).any(axis=1) if pos else np.zeros(n, dtype=bool)
        out[done, pad] = 0.0
        live = ~done
        if live.any():
            # the start state reuses the terminator's row index
            prev = prefixes[live, -1] if pos else np.full(int(live.sum()), term)
            out[np.ix_(live, np.arange(pad))] = self._rows(x[live], pos, prev)
        return out
