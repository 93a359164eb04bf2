"""Conformal calibration and decoding for sequence models.

Two procedures are provided:

* **Sub-beam sets.**  Calibrate a split-conformal threshold on the
  calibration items whose true sequence appears in a fixed-width beam, then
  keep the beam hypotheses scoring at or above it.  Coverage is at least
  ``(1 - alpha) * B(delta; N_beta, N + 1 - N_beta)`` with probability
  ``1 - delta``, where ``B(delta; a, b)`` is the Beta quantile
  (Clopper-Pearson lower bound on the beam coverage).

* **Dynamic conformal beams.**  Calibrate one threshold per decoding step
  by iteratively removing the ``k_l = floor((N_{l-1} + 1) alpha)`` lowest
  truncated scores, then decode by keeping every extension whose truncated
  score clears the step threshold.  Marginal coverage equals
  ``1 - sum(k_l) / (N_0 + 1) >= (1 - alpha)^L``.

Scores are length-normalized model scores of (truncated) sequences, see
:func:`confbeam.seqcore.normalized_score`.  Acceptance is always
non-strict (``score >= threshold``).  A threshold of ``None`` (``NO_PRUNE``)
arises when ``k = 0`` and accepts every positive-probability candidate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import optimize, special

from confbeam.decoding import beam_search_batch, scored
from confbeam.models.base import NEG_INF, ArsModel, take
from confbeam.seqcore import (
    Sequence,
    ScoredSequence,
    TokenAlphabet,
    is_acceptable,
    normalized_score,
    normalized_scores,
    pad_to,
    truncated_scores,
)

log = logging.getLogger(__name__)

NO_PRUNE = None
DEFAULT_BEAM_CAP = 10_000


class CalibrationError(ValueError):
    """Calibration data cannot support the requested procedure."""


class BeamOverflowError(RuntimeError):
    """A dynamic beam grew past the safety cap.

    ``partial`` holds the hypotheses that had survived when the cap was hit
    and ``step`` the (1-based) decoding step.
    """

    def __init__(self, step: int, size: int, cap: int, partial):
        super().__init__(f"dynamic beam reached {size} hypotheses at step {step} (cap {cap})")
        self.step = step
        self.size = size
        self.cap = cap
        self.partial = partial


# ---------------------------------------------------------------------------
# numeric kernels


def beta_quantile(delta: float, a: float, b: float) -> float:
    """``delta``-quantile of Beta(a, b) by bracketed root-finding on the regularized incomplete beta."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if not (a > 0 and b > 0) or not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError(f"Beta parameters must be positive, got a={a}, b={b}")
    f = lambda q: special.betainc(a, b, q) - delta  # noqa: E731
    q = optimize.brentq(f, 0.0, 1.0, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(f(q)) > 1e-10:
        raise ArithmeticError(f"beta_quantile({delta}, {a}, {b}) did not converge")
    return float(q)


def clopper_pearson_lower(successes: int, trials: int, delta: float) -> float:
    """One-sided lower confidence bound at level ``1 - delta`` on a binomial rate."""
    if not 0 <= successes <= trials:
        raise ValueError(f"need 0 <= successes <= trials, got {successes}/{trials}")
    if successes == 0:
        return 0.0
    return beta_quantile(delta, successes, trials + 1 - successes)


def threshold_rank(alpha: float, n: int) -> int:
    """``floor(alpha * (n + 1))``, capped at ``n``.

    ``alpha`` is read as its shortest decimal form and the product is taken
    in exact rational arithmetic, so ``0.29 * 100`` gives 29 rather than
    ``floor(28.999999999999996)``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return min(math.floor(Fraction(repr(float(alpha))) * (n + 1)), n)


def passes(score: float, log_prob: float, threshold: float | None) -> bool:
    """Non-strict threshold test; zero-probability candidates never pass."""
    return log_prob != NEG_INF and (threshold is NO_PRUNE or score >= threshold)


# ---------------------------------------------------------------------------
# split conformal


@dataclass(frozen=True)
class SplitCalibration:
    alpha: float
    n: int
    k: int
    threshold: float | None

    def accepts(self, score: float) -> bool:
        return self.threshold is NO_PRUNE or score >= self.threshold


def split_threshold(scores, alpha: float) -> SplitCalibration:
    """Threshold at the ``floor(alpha (N + 1))``-th smallest calibration score."""
    scores = np.asarray(scores, dtype=float).ravel()
    if scores.size == 0:
        raise CalibrationError("cannot calibrate on an empty score list")
    n = scores.size
    k = threshold_rank(alpha, n)
    if k == 0:
        return SplitCalibration(alpha, n, 0, NO_PRUNE)
    return SplitCalibration(alpha, n, k, float(np.partition(scores, k - 1)[k - 1]))


# ---------------------------------------------------------------------------
# sub-beam sets


@dataclass(frozen=True)
class SubBeamCalibration:
    inner: SplitCalibration
    n_total: int
    n_beta: int
    width: int
    max_len: int
    delta: float
    beam_cov_lower: float
    ranking: str = "normalized"
    convention: str = "log"

    @property
    def alpha(self) -> float:
        return self.inner.alpha

    @property
    def threshold(self):
        return self.inner.threshold

    @property
    def composite_guarantee(self) -> float:
        return (1.0 - self.inner.alpha) * self.beam_cov_lower

    def to_dict(self) -> dict:
        return {
            "procedure": "fixed-beam", "alpha": self.alpha, "delta": self.delta, "width": self.width,
            "max_len": self.max_len, "n_total": self.n_total, "n_beta": self.n_beta, "k": self.inner.k,
            "threshold": self.inner.threshold, "beam_cov_lower": self.beam_cov_lower,
            "guarantee": self.composite_guarantee, "ranking": self.ranking, "score_convention": self.convention,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubBeamCalibration":
        inner = SplitCalibration(d["alpha"], d["n_beta"], d["k"], d["threshold"])
        return cls(inner, d["n_total"], d["n_beta"], d["width"], d["max_len"], d["delta"], d["beam_cov_lower"],
                   d.get("ranking", "normalized"), d.get("score_convention", "log"))


def sub_beam_from_scores(in_beam_scores, n_total: int, alpha: float, delta: float, width: int, max_len: int,
                         ranking: str = "normalized", convention: str = "log") -> SubBeamCalibration:
    """Sub-beam calibration from the true-sequence scores of the in-beam items."""
    in_beam_scores = np.asarray(in_beam_scores, dtype=float).ravel()
    n_beta = in_beam_scores.size
    if n_beta == 0:
        raise CalibrationError(
            f"no calibration sequence is in its width-{width} beam (of {n_total}); the model is too weak "
            "for this width"
        )
    inner = split_threshold(in_beam_scores, alpha)
    lower = clopper_pearson_lower(n_beta, n_total, delta)
    return SubBeamCalibration(inner, n_total, n_beta, width, max_len, delta, lower, ranking, convention)


def _as_arrays(calib, alphabet: TokenAlphabet, max_len: int | None = None):
    """Split ``[(condition, Sequence | tokens), ...]`` into conditions and content tuples."""
    conditions, contents = [], []
    for cond, seq in calib:
        conditions.append(cond)
        contents.append(tuple(seq.content()) if isinstance(seq, Sequence)
                        else tuple(t for t in seq if t != alphabet.padding))
    if conditions and isinstance(conditions[0], np.ndarray):
        conditions = np.stack(conditions)
    return conditions, contents


def in_beam(results, truth_contents) -> np.ndarray:
    """Whether each true sequence (padding-free) is among its beam's hypotheses."""
    return np.array([any(b.sequence.content() == tuple(t) for b in res.beams)
                     for res, t in zip(results, truth_contents)], dtype=bool)


def calibrate_sub_beam(model: ArsModel, calib, width: int, max_len: int, alpha: float, delta: float,
                       ranking: str = "normalized", convention: str = "log") -> SubBeamCalibration:
    """Beam-search every calibration input and calibrate on the in-beam subgroup.

    The conformal score of an in-beam item is the normalized model score of
    its true sequence.
    """
    if not calib:
        raise CalibrationError("empty calibration set")
    conditions, contents = _as_arrays(calib, model.alphabet)
    results = beam_search_batch(model, conditions, width, max_len, ranking, convention)
    scores = []
    for res, truth in zip(results, contents):
        for b in res.beams:
            if b.sequence.content() == truth:
                scores.append(b.normalized_score)
                break
    return sub_beam_from_scores(scores, len(contents), alpha, delta, width, max_len, ranking, convention)


def filter_beam(result, cal: SubBeamCalibration) -> list[ScoredSequence]:
    return [b for b in result.beams if cal.inner.accepts(b.normalized_score)]


def predict_sub_beam(model: ArsModel, condition, cal: SubBeamCalibration, max_len: int | None = None,
                     condition_id=None) -> list[ScoredSequence]:
    """Beam hypotheses scoring at least the in-beam threshold, best first."""
    res = beam_search_batch(model, [condition] if not isinstance(condition, np.ndarray) else condition[None, :],
                            cal.width, max_len or cal.max_len, cal.ranking, cal.convention,
                            condition_ids=[condition_id])[0]
    return filter_beam(res, cal)


# ---------------------------------------------------------------------------
# dynamic conformal beams


@dataclass(frozen=True)
class StepThreshold:
    k: int
    n: int
    threshold: float | None


@dataclass(frozen=True)
class DynamicThresholds:
    """Per-step thresholds ``t_l`` with surviving counts ``N_l``.

    ``steps[l - 1]`` describes decoding step ``l``: ``k`` items were pruned
    there, ``n`` survived, and ``threshold`` is the ``k``-th smallest
    step-``l`` score among the ``N_{l-1}`` survivors (``None`` if ``k = 0``).
    """

    alpha: float
    n0: int
    steps: tuple[StepThreshold, ...]
    convention: str = "log"
    n_rejected: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def max_len(self) -> int:
        return len(self.steps)

    @property
    def ks(self) -> list[int]:
        return [s.k for s in self.steps]

    @property
    def total_pruned(self) -> int:
        return sum(self.ks)

    @property
    def exact_coverage(self) -> float:
        return 1.0 - self.total_pruned / (self.n0 + 1)

    @property
    def lower_bound(self) -> float:
        return (1.0 - self.alpha) ** self.max_len

    @property
    def thresholds(self) -> list[float | None]:
        return [s.threshold for s in self.steps]

    def threshold_array(self) -> np.ndarray:
        """Thresholds with ``NO_PRUNE`` mapped to ``-inf``."""
        return np.array([NEG_INF if t is NO_PRUNE else t for t in self.thresholds], dtype=float)

    @classmethod
    def from_thresholds(cls, thresholds, alpha: float = 0.5, n0: int = 0, convention: str = "log"):
        """Hand-specified thresholds (counts are left at zero); for experiments and tests."""
        return cls(alpha, n0, tuple(StepThreshold(0, n0, None if t is None else float(t)) for t in thresholds),
                   convention)

    def to_dict(self) -> dict:
        d = {
            "procedure": "dynamic", "alpha": self.alpha, "n0": self.n0, "max_len": self.max_len,
            "score_convention": self.convention, "n_rejected": self.n_rejected,
            "steps": [{"step": i + 1, "k": s.k, "n": s.n, "threshold": s.threshold} for i, s in enumerate(self.steps)],
            "exact_coverage": self.exact_coverage, "guarantee": self.lower_bound,
        }
        d.update(self.meta)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DynamicThresholds":
        steps = tuple(StepThreshold(s["k"], s["n"], s["threshold"]) for s in d["steps"])
        known = {"procedure", "alpha", "n0", "max_len", "score_convention", "n_rejected", "steps",
                 "exact_coverage", "guarantee"}
        meta = {k: v for k, v in d.items() if k not in known}
        return cls(d["alpha"], d["n0"], steps, d.get("score_convention", "log"), d.get("n_rejected", 0), meta)


def k_schedule(n0: int, alpha: float, L: int) -> list[int]:
    """Pruning counts ``k_l`` of the iterative calibration; they depend only on ``N_0`` and ``alpha``."""
    ks, n = [], n0
    for _ in range(L):
        k = threshold_rank(alpha, n)
        ks.append(k)
        n -= k
    return ks


def dynamic_thresholds_from_scores(scores, alpha: float, convention: str = "log", n_rejected: int = 0,
                                   meta: dict | None = None) -> DynamicThresholds:
    """Iterative calibration on a ``(N_0, L)`` matrix of truncated scores.

    At step ``l`` the ``k_l`` survivors with the lowest step-``l`` scores
    are removed (ties by calibration order) and the threshold is the
    largest removed score.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise CalibrationError("need a non-empty (N0, L) score matrix")
    n0, L = scores.shape
    survivors = np.arange(n0)
    steps = []
    for l in range(L):
        n = survivors.size
        k = threshold_rank(alpha, n)
        if k == 0:
            steps.append(StepThreshold(0, n, NO_PRUNE))
            continue
        order = np.argsort(scores[survivors, l], kind="stable")
        thr = float(scores[survivors[order[k - 1]], l])
        survivors = survivors[order[k:]]
        steps.append(StepThreshold(k, survivors.size, thr))
        if survivors.size == 0 and l + 1 < L:
            raise CalibrationError(
                f"calibration set exhausted at step {l + 1} of {L} (N_{l + 1} = 0); use more calibration "
                "data or a smaller alpha"
            )
    return DynamicThresholds(float(alpha), n0, tuple(steps), convention, n_rejected, dict(meta or {}))


def true_scores(model: ArsModel, conditions, tokens, convention: str = "log"):
    """Truncated scores and per-step log-probabilities of padded true sequences."""
    tokens = np.asarray(tokens, dtype=np.int64)
    step_lp = model.token_log_probs(conditions, tokens)
    return truncated_scores(step_lp, tokens, model.alphabet, convention), np.cumsum(step_lp, axis=1)


def calibrate_dynamic(model: ArsModel, calib, alpha: float, max_len: int, convention: str = "log",
                      meta: dict | None = None) -> DynamicThresholds:
    """Step-wise calibration over ``max_len`` decoding steps.

    Calibration items whose true sequence does not terminate within
    ``max_len`` tokens are rejected (and counted in ``n_rejected``).
    """
    if not calib:
        raise CalibrationError("empty calibration set")
    alphabet = model.alphabet
    conditions, contents = _as_arrays(calib, alphabet)
    keep = [i for i, c in enumerate(contents) if len(c) <= max_len and c and c[-1] == alphabet.terminator]
    rejected = len(contents) - len(keep)
    if rejected:
        log.warning("rejected %d of %d calibration items longer than max_len=%d", rejected, len(contents), max_len)
    if not keep:
        raise CalibrationError(f"no calibration sequence terminates within max_len={max_len}")
    if isinstance(conditions, np.ndarray):
        conditions = conditions[keep]
    else:
        conditions = [conditions[i] for i in keep]
    tokens = np.array([pad_to(contents[i], max_len, alphabet) for i in keep], dtype=np.int64)
    scores, _ = true_scores(model, conditions, tokens, convention)
    return dynamic_thresholds_from_scores(scores, alpha, convention, rejected, meta)


def region_contains_scores(th: DynamicThresholds, scores, cum_log_probs) -> np.ndarray:
    """Region membership for rows of truncated scores (``(n, L)`` arrays)."""
    scores = np.asarray(scores, dtype=float)
    ok = np.asarray(cum_log_probs)[:, -1] > NEG_INF
    return ok & np.all(scores >= th.threshold_array()[None, :], axis=1)


def region_contains(th: DynamicThresholds, model: ArsModel, condition, seq) -> bool:
    """True iff every truncation of ``seq`` clears its step threshold."""
    alphabet = model.alphabet
    tokens = tuple(seq.tokens) if isinstance(seq, Sequence) else tuple(seq)
    if len(tokens) < th.max_len and alphabet.terminator in tokens:
        tokens = pad_to(tokens, th.max_len, alphabet)
    if not is_acceptable(tokens, th.max_len, alphabet):
        return False
    logp, n = 0.0, 0
    for l, t in enumerate(tokens):
        if t != alphabet.padding:
            logp += float(model.next_token_log_probs(condition, tokens[:l])[t])
            n += 1
        if not passes(normalized_score(logp, n, th.convention), logp, th.thresholds[l]):
            return False
    return True


@dataclass
class _Hyp:
    tokens: tuple[int, ...]
    log_prob: float
    finished: bool
    scores: tuple[float, ...]


def _grow(model: ArsModel, condition, thresholds, convention: str, cap: int | None, check_finished: bool):
    alphabet = model.alphabet
    term = alphabet.terminator
    beam = [_Hyp((), 0.0, False, ())]
    for l, thr in enumerate(thresholds):
        new = []
        for h in beam:
            if h.finished:
                s = h.scores[-1]
                if not check_finished or passes(s, h.log_prob, thr):
                    new.append(_Hyp(h.tokens, h.log_prob, True, h.scores + (s,)))
                continue
            row = model.next_token_log_probs(condition, h.tokens)
            for t in alphabet.extended:
                lp = float(row[t])
                if lp == NEG_INF:
                    continue
                logp = h.log_prob + lp
                s = normalized_score(logp, len(h.tokens) + 1, convention)
                if passes(s, logp, thr):
                    new.append(_Hyp(h.tokens + (t,), logp, t == term, h.scores + (s,)))
        if cap is not None and len(new) > cap:
            raise BeamOverflowError(l + 1, len(new), cap, _finalize(alphabet, new, convention, None))
        beam = new
        if not beam:
            break
    return beam


def _finalize(alphabet, hyps, convention, condition_id) -> list[ScoredSequence]:
    out = [scored(alphabet, h.tokens, h.log_prob, convention, condition_id) for h in hyps]
    out.sort(key=lambda s: (-s.normalized_score, s.sequence.content()))
    return out


def decode_dynamic(model: ArsModel, condition, th: DynamicThresholds, cap: int | None = DEFAULT_BEAM_CAP,
                   condition_id=None) -> list[ScoredSequence]:
    """Dynamic conformal beam: all sequences whose every truncation clears its threshold.

    Live hypotheses are expanded by every token of ``A ∪ {terminator}``;
    terminated ones are extended by padding, which leaves their score
    unchanged, and are re-checked against each later threshold.  The
    result is sorted best first; it may be empty.
    """
    hyps = _grow(model, condition, th.thresholds, th.convention, cap, check_finished=True)
    return _finalize(model.alphabet, hyps, th.convention, condition_id)


@dataclass
class DynamicBeams:
    """Flat output of :func:`decode_dynamic_batch`.

    Row ``j`` is a hypothesis of condition ``owner[j]``; rows are grouped
    by owner and sorted best first within each group, matching
    :func:`decode_dynamic`.  ``overflow[i]`` marks conditions whose beam hit
    the cap; they have no rows.
    """

    owner: np.ndarray
    tokens: np.ndarray
    log_prob: np.ndarray
    length: np.ndarray
    score: np.ndarray
    overflow: np.ndarray

    def sizes(self) -> np.ndarray:
        return np.bincount(self.owner, minlength=self.overflow.size)

    def sets(self, alphabet: TokenAlphabet) -> list[list[ScoredSequence]]:
        out: list[list[ScoredSequence]] = [[] for _ in range(self.overflow.size)]
        for j in range(self.owner.size):
            toks = tuple(int(t) for t in self.tokens[j] if t != alphabet.padding)
            out[self.owner[j]].append(ScoredSequence(alphabet.sequence(toks), float(self.log_prob[j]),
                                                     int(self.length[j]), float(self.score[j])))
        return out


def decode_dynamic_batch(model: ArsModel, conditions, th: DynamicThresholds,
                         cap: int | None = DEFAULT_BEAM_CAP) -> DynamicBeams:
    """Vectorized :func:`decode_dynamic` over many conditions.

    Conditions whose beam exceeds ``cap`` are flagged in ``overflow``
    instead of raising.
    """
    alphabet = model.alphabet
    term, pad = alphabet.terminator, alphabet.padding
    ext = np.array(alphabet.extended)
    n = len(conditions)
    thr = th.threshold_array()
    owner = np.arange(n)
    tokens = np.zeros((n, 0), dtype=np.int64)
    logp = np.zeros(n)
    length = np.zeros(n, dtype=np.int64)
    score = np.zeros(n)
    finished = np.zeros(n, dtype=bool)
    overflow = np.zeros(n, dtype=bool)
    for l in range(th.max_len):
        fin = np.flatnonzero(finished)
        live = np.flatnonzero(~finished)
        keep_fin = fin[score[fin] >= thr[l]]
        parts_owner, parts_tok, parts_lp, parts_len, parts_score, parts_fin = (
            [owner[keep_fin]], [np.concatenate([tokens[keep_fin], np.full((keep_fin.size, 1), pad)], axis=1)],
            [logp[keep_fin]], [length[keep_fin]], [score[keep_fin]], [np.ones(keep_fin.size, dtype=bool)])
        if live.size:
            rows = model.batch_next_log_probs(take(conditions, owner[live]), tokens[live])[:, ext]
            clp = logp[live, None] + rows
            clen = length[live, None] + 1
            ok = rows > NEG_INF
            csc = np.where(ok, normalized_scores(np.where(ok, clp, 0.0), np.broadcast_to(clen, clp.shape),
                                                 th.convention), NEG_INF)
            ok &= csc >= thr[l]
            pi, ti = np.nonzero(ok)
            parts_owner.append(owner[live[pi]])
            parts_tok.append(np.concatenate([tokens[live[pi]], ext[ti][:, None]], axis=1))
            parts_lp.append(clp[pi, ti])
            parts_len.append(clen[pi, 0])
            parts_score.append(csc[pi, ti])
            parts_fin.append(ext[ti] == term)
        owner = np.concatenate(parts_owner)
        tokens = np.concatenate(parts_tok).astype(np.int64).reshape(owner.size, l + 1)
        logp, length = np.concatenate(parts_lp), np.concatenate(parts_len)
        score, finished = np.concatenate(parts_score), np.concatenate(parts_fin)
        if cap is not None:
            over = np.bincount(owner, minlength=n) > cap
            if over.any():
                overflow |= over
                keep = ~over[owner]
                owner, tokens, logp, length, score, finished = (
                    owner[keep], tokens[keep], logp[keep], length[keep], score[keep], finished[keep])
        if owner.size == 0:
            tokens = np.zeros((0, th.max_len), dtype=np.int64)
            break
    if tokens.shape[1] < th.max_len:
        tokens = np.concatenate([tokens, np.full((owner.size, th.max_len - tokens.shape[1]), pad)], axis=1)
    # group by owner, best score first, then lower token ids
    order = np.lexsort([tokens[:, j] for j in range(th.max_len - 1, -1, -1)] + [-score, owner])
    return DynamicBeams(owner[order], tokens[order], logp[order], length[order], score[order], overflow)


# ---------------------------------------------------------------------------
# length-conditional calibration


@dataclass(frozen=True)
class LengthGroupCalibration:
    """Independent dynamic calibrations for consecutive ranges of true content length."""

    buckets: tuple[tuple[int, int], ...]
    calibrations: tuple[DynamicThresholds, ...]

    def __post_init__(self):
        lo = 1
        for a, b in self.buckets:
            if a != lo or b < a:
                raise ValueError(f"buckets must partition [1, L] into consecutive ranges, got {self.buckets}")
            lo = b + 1
        if len(self.calibrations) != len(self.buckets):
            raise ValueError("need one calibration per bucket")

    @property
    def max_len(self) -> int:
        return self.buckets[-1][1]

    @property
    def convention(self) -> str:
        return self.calibrations[0].convention

    def bucket_of(self, length: int) -> int:
        for i, (a, b) in enumerate(self.buckets):
            if a <= length <= b:
                return i
        raise ValueError(f"length {length} is outside every bucket")

    def envelope(self) -> list[float | None]:
        """Per-step minimum threshold over the buckets that reach that step."""
        out = []
        for l in range(self.max_len):
            ts = [c.thresholds[l] for (_, b), c in zip(self.buckets, self.calibrations) if b > l]
            out.append(NO_PRUNE if any(t is NO_PRUNE for t in ts) else min(ts))
        return out

    def to_dict(self) -> dict:
        return {"procedure": "length-groups", "buckets": [list(b) for b in self.buckets],
                "calibrations": [c.to_dict() for c in self.calibrations]}

    @classmethod
    def from_dict(cls, d: dict) -> "LengthGroupCalibration":
        return cls(tuple(tuple(b) for b in d["buckets"]),
                   tuple(DynamicThresholds.from_dict(c) for c in d["calibrations"]))


def calibrate_length_groups(model: ArsModel, calib, alpha: float, edges, convention: str = "log",
                            min_count: int = 1) -> LengthGroupCalibration:
    """Calibrate each length bucket on its own items with ``max_len`` = the bucket's upper edge.

    ``edges`` are the ascending upper edges of the buckets, e.g. ``[3, 6]``
    for lengths ``1..3`` and ``4..6``.  Items are bucketed by the content
    length of their true sequence (terminator included).
    """
    edges = [int(e) for e in edges]
    if not edges or any(b <= a for a, b in zip(edges, edges[1:])) or edges[0] < 1:
        raise ValueError(f"bucket edges must be ascending positive integers, got {edges}")
    buckets = tuple(zip([1] + [e + 1 for e in edges[:-1]], edges))
    alphabet = model.alphabet
    groups: list[list] = [[] for _ in buckets]
    for cond, seq in calib:
        content = seq.content() if isinstance(seq, Sequence) else tuple(t for t in seq if t != alphabet.padding)
        n = len(content)
        for i, (a, b) in enumerate(buckets):
            if a <= n <= b:
                groups[i].append((cond, alphabet.sequence(content)))
                break
    cals = []
    for (a, b), items in zip(buckets, groups):
        if len(items) < max(min_count, 1):
            raise CalibrationError(f"length bucket [{a}, {b}] has {len(items)} calibration items (< {min_count})")
        cals.append(calibrate_dynamic(model, items, alpha, b, convention))
    return LengthGroupCalibration(buckets, tuple(cals))


def decode_length_groups(model: ArsModel, condition, lg: LengthGroupCalibration,
                         cap: int | None = DEFAULT_BEAM_CAP, condition_id=None) -> list[ScoredSequence]:
    """Two-phase decoding with bucket-specific thresholds.

    Phase one grows the beam with the per-step minimum threshold across
    buckets until every hypothesis terminates.  Phase two assigns each
    hypothesis to the bucket of its content length and keeps it only if it
    clears every step threshold of that bucket.
    """
    hyps = _grow(model, condition, lg.envelope(), lg.convention, cap, check_finished=False)
    kept = []
    for h in hyps:
        cal = lg.calibrations[lg.bucket_of(len(h.tokens))]
        steps = cal.max_len
        if all(passes(h.scores[l], h.log_prob, cal.thresholds[l]) for l in range(steps)):
            kept.append(h)
    return _finalize(model.alphabet, kept, lg.convention, condition_id)


# ---------------------------------------------------------------------------
# guarantees


def guarantee(alpha: float, L: int, th: DynamicThresholds | None = None, n0: int | None = None,
              ks=None) -> tuple[float | None, float]:
    """``(exact, lower_bound)`` = ``(1 - sum(k_l)/(N_0 + 1), (1 - alpha)^L)``.

    The exact value needs either calibrated thresholds, explicit counts
    ``(n0, ks)``, or ``n0`` alone (the counts follow from ``alpha``).
    Returns ``None`` for the exact value when none is given.
    """
    lower = (1.0 - alpha) ** L
    if th is not None:
        n0, ks = th.n0, th.ks
    if n0 is None:
        return None, lower
    if ks is None:
        ks = k_schedule(n0, alpha, L)
    exact = 1.0 - sum(ks) / (n0 + 1)
    if exact < lower - 1e-12:
        raise AssertionError(f"exact coverage {exact} below the (1 - alpha)^L bound {lower}")
    return exact, lower


@dataclass(frozen=True)
class BetaLaw:
    a: float
    b: float
    degenerate: bool = False

    @property
    def mean(self) -> float:
        return self.a / (self.a + self.b)


def conditional_coverage_law(n0: int, ks) -> BetaLaw:
    """Law of the coverage conditional on the calibration draw: Beta(N_0 + 1 - K, K).

    With ``K = 0`` nothing is ever pruned and the coverage is one almost
    surely; the result is flagged ``degenerate``.
    """
    K = int(sum(ks))
    if K > n0:
        raise ValueError(f"sum of k_l = {K} exceeds N_0 = {n0}")
    return BetaLaw(float(n0 + 1 - K), float(K), degenerate=(K == 0))
