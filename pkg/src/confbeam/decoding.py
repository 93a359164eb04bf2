"""Greedy and fixed-width beam search, plus an exhaustive argmax for small models.

Hypotheses are ranked by the length-normalized score by default
(``ranking="normalized"``) or by raw log-probability (``ranking="raw"``).
Ties are broken by the token list, lower ids first.  Terminated hypotheses
stay in the beam unchanged and compete with live ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from confbeam.models.base import NEG_INF, ArsModel, enumerate_support, take
from confbeam.seqcore import ScoredSequence, TokenAlphabet, normalized_score, normalized_scores

RANKINGS = ("normalized", "raw")


@dataclass(frozen=True)
class BeamResult:
    beams: tuple[ScoredSequence, ...]
    width: int
    max_len: int
    condition_id: object = None
    ranking: str = "normalized"

    def __len__(self):
        return len(self.beams)

    def __iter__(self):
        return iter(self.beams)

    def sequences(self):
        return [b.sequence for b in self.beams]


def scored(alphabet: TokenAlphabet, tokens, log_prob: float, convention: str = "log",
           condition_id=None) -> ScoredSequence:
    """Wrap padding-free ``tokens`` as a :class:`ScoredSequence`."""
    tokens = tuple(int(t) for t in tokens)
    n = sum(1 for t in tokens if t != alphabet.padding)
    return ScoredSequence(alphabet.sequence(tokens, condition_id), float(log_prob), n,
                          normalized_score(log_prob, n, convention))


def _rank_value(log_prob: float, length: int, ranking: str, convention: str) -> float:
    if ranking == "normalized":
        return normalized_score(log_prob, length, convention)
    if ranking == "raw":
        return log_prob
    raise ValueError(f"unknown ranking {ranking!r}; expected one of {RANKINGS}")


def greedy_decode(model: ArsModel, condition, max_len: int, convention: str = "log",
                  condition_id=None) -> ScoredSequence:
    """Repeatedly append the most probable token (lowest id on ties) until the terminator or ``max_len``."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    alphabet = model.alphabet
    tokens: tuple[int, ...] = ()
    logp = 0.0
    for _ in range(max_len):
        row = model.next_token_log_probs(condition, tokens)
        best = None
        for t in alphabet.extended:
            if best is None or row[t] > row[best]:
                best = t
        tokens += (best,)
        logp += float(row[best])
        if best == alphabet.terminator:
            break
    return scored(alphabet, tokens, logp, convention, condition_id)


def beam_search(model: ArsModel, condition, width: int, max_len: int, ranking: str = "normalized",
                convention: str = "log", condition_id=None) -> BeamResult:
    """Fixed-width beam search for a single condition.

    Returns the ``width`` best hypotheses that are terminated or have
    reached ``max_len`` tokens, best first.
    """
    if width < 1 or max_len < 1:
        raise ValueError("width and max_len must be >= 1")
    alphabet = model.alphabet
    term, pad = alphabet.terminator, alphabet.padding
    hyps: list[tuple[tuple[int, ...], float, bool]] = [((), 0.0, False)]
    for l in range(max_len):
        if all(fin for _, _, fin in hyps):
            break
        cands = []
        for tokens, logp, fin in hyps:
            if fin:
                cands.append((tokens, logp, True))
                continue
            row = model.next_token_log_probs(condition, tokens)
            for t in alphabet.extended:
                if row[t] == NEG_INF:
                    continue
                cands.append((tokens + (t,), logp + float(row[t]), t == term))

        def key(c):
            tokens, logp, _ = c
            return (-_rank_value(logp, len(tokens), ranking, convention),
                    tokens + (pad,) * (l + 1 - len(tokens)))

        cands.sort(key=key)
        hyps = cands[:width]
    beams = tuple(scored(alphabet, t, lp, convention, condition_id) for t, lp, _ in hyps)
    return BeamResult(beams, width, max_len, condition_id, ranking)


@dataclass
class BeamArrays:
    """Dense beam-search output for ``n`` conditions and width ``W``.

    ``tokens`` is ``(n, W, l)`` with padding after the terminator; slots
    with ``valid == False`` are unused (fewer than ``W`` hypotheses exist).
    """

    tokens: np.ndarray
    log_prob: np.ndarray
    length: np.ndarray
    valid: np.ndarray
    score: np.ndarray

    def padded_tokens(self, L: int, pad: int) -> np.ndarray:
        n, W, l = self.tokens.shape
        if l >= L:
            return self.tokens[:, :, :L]
        return np.concatenate([self.tokens, np.full((n, W, L - l), pad, dtype=self.tokens.dtype)], axis=2)


def beam_search_arrays(model: ArsModel, conditions, width: int, max_len: int, ranking: str = "normalized",
                       convention: str = "log") -> BeamArrays:
    """Vectorized :func:`beam_search` over many conditions.

    Uses ``model.batch_next_log_probs`` so that models with a vectorized
    implementation decode thousands of conditions per call.  Produces the
    same hypotheses, order and scores as the per-condition search.
    """
    if width < 1 or max_len < 1:
        raise ValueError("width and max_len must be >= 1")
    if ranking not in RANKINGS:
        raise ValueError(f"unknown ranking {ranking!r}; expected one of {RANKINGS}")
    alphabet = model.alphabet
    term, pad, V = alphabet.terminator, alphabet.padding, alphabet.size
    n, W = len(conditions), width
    owner = np.repeat(np.arange(n), W)

    tokens = np.zeros((n, W, 0), dtype=np.int64)
    logp = np.full((n, W), NEG_INF)
    logp[:, 0] = 0.0
    length = np.zeros((n, W), dtype=np.int64)
    valid = np.zeros((n, W), dtype=bool)
    valid[:, 0] = True
    finished = np.zeros((n, W), dtype=bool)
    not_pad = (np.arange(V) != pad)[None, :]

    for l in range(max_len):
        live = (valid & ~finished).reshape(-1)
        if not live.any():
            break
        flat_tok = tokens.reshape(n * W, l)
        flat_lp = logp.reshape(-1)
        cand = np.full((n * W, V), NEG_INF)
        rows = np.flatnonzero(live)
        cand[rows] = flat_lp[rows, None] + model.batch_next_log_probs(take(conditions, owner[rows]), flat_tok[rows])
        cand[rows, pad] = NEG_INF
        done = np.flatnonzero((valid & finished).reshape(-1))
        cand[done, pad] = flat_lp[done]
        cand_len = length.reshape(-1)[:, None] + not_pad
        ok = cand > NEG_INF
        if ranking == "normalized":
            rank = np.where(ok, normalized_scores(np.where(ok, cand, 0.0), np.maximum(cand_len, 1), convention),
                            NEG_INF)
        else:
            rank = cand
        rank = rank.reshape(n, W * V)
        ctok = np.concatenate([np.repeat(flat_tok[:, None, :], V, axis=1),
                               np.broadcast_to(np.arange(V)[None, :, None], (n * W, V, 1))], axis=2)
        ctok = ctok.reshape(n, W * V, l + 1)
        # lexsort: last key is primary, so score first, then tokens left to right
        keys = [ctok[:, :, j] for j in range(l, -1, -1)] + [-rank]
        order = np.lexsort(keys, axis=-1)[:, :W]
        r = np.arange(n)[:, None]
        parent, tok = order // V, order % V
        tokens = ctok[r, order]
        logp = cand.reshape(n, W * V)[r, order]
        length = cand_len.reshape(n, W * V)[r, order]
        valid = ok.reshape(n, W * V)[r, order]
        finished = finished[r, parent] | (tok == term)
        logp = np.where(valid, logp, NEG_INF)

    score = np.where(valid, normalized_scores(np.where(valid, logp, 0.0), np.maximum(length, 1), convention), NEG_INF)
    return BeamArrays(tokens, logp, length, valid, score)


def beam_search_batch(model: ArsModel, conditions, width: int, max_len: int, ranking: str = "normalized",
                      convention: str = "log", condition_ids=None) -> list[BeamResult]:
    """:func:`beam_search_arrays` unpacked into one :class:`BeamResult` per condition."""
    arr = beam_search_arrays(model, conditions, width, max_len, ranking, convention)
    pad = model.alphabet.padding
    n = len(conditions)
    ids = condition_ids if condition_ids is not None else [None] * n
    out = []
    for i in range(n):
        beams = []
        for w in np.flatnonzero(arr.valid[i]):
            toks = tuple(int(t) for t in arr.tokens[i, w] if t != pad)
            beams.append(ScoredSequence(model.alphabet.sequence(toks, ids[i]), float(arr.log_prob[i, w]),
                                        int(arr.length[i, w]), float(arr.score[i, w])))
        out.append(BeamResult(tuple(beams), width, max_len, ids[i], ranking))
    return out


def exact_argmax(model: ArsModel, condition, max_len: int, convention: str = "log", condition_id=None,
                 max_leaves: int = 10**7) -> ScoredSequence:
    """Most probable terminated sequence of at most ``max_len`` tokens, by exhaustive enumeration."""
    alphabet = model.alphabet
    best = None
    for seq, lp in enumerate_support(model, condition, max_len, max_leaves=max_leaves):
        content = seq.content()
        if content[-1] != alphabet.terminator:
            continue
        if best is None or (-lp, content) < (-best[1], best[0]):
            best = (content, lp)
    if best is None:
        raise ValueError(f"no sequence terminates within {max_len} tokens")
    return scored(alphabet, best[0], best[1], convention, condition_id)


def write_beams_jsonl(results, path, alphabet: TokenAlphabet) -> None:
    """One line per hypothesis: ``{"id", "rank", "tokens", "logp", "norm_score"}``."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for res in results:
            for rank, b in enumerate(res.beams, 1):
                f.write(json.dumps({"id": res.condition_id, "rank": rank, "tokens": alphabet.decode(b.tokens),
                                    "logp": b.log_prob, "norm_score": b.normalized_score}) + "\n")
