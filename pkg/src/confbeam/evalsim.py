"""Monte-Carlo experiment harness and set-quality metrics.

Each repetition draws an independent calibration/test split from a
ground-truth task, calibrates, predicts on the test split and records
coverage, set sizes and how closely set sizes track the rank of the true
sequence (the "oracle" size).  Repetitions use seeds derived from one
master seed and the repetition index, so results do not depend on the
number of workers.

Reports are written as plot-ready CSV files: one aggregate row per
configuration plus per-repetition, per-length, histogram and scatter
tables.  Floats are written with ``repr`` so that reading a file back
returns bit-identical values.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from confbeam.conformal import (
    DEFAULT_BEAM_CAP,
    NO_PRUNE,
    CalibrationError,
    decode_dynamic_batch,
    dynamic_thresholds_from_scores,
    region_contains_scores,
    sub_beam_from_scores,
    true_scores,
)
from confbeam.decoding import beam_search_arrays
from confbeam.models.base import NEG_INF, ArsModel, derive_rng, take
from confbeam.models.tasks import GroundTruthTask
from confbeam.seqcore import Sequence, ScoredSequence

# ---------------------------------------------------------------------------
# oracle metrics


@dataclass(frozen=True)
class OracleAnalysis:
    """Per-item comparison of a prediction set with the oracle set size.

    ``true_rank`` is the 1-based rank of the true sequence in the
    score-ordered candidate list, or ``None`` when absent.
    """

    true_rank: int | None
    oracle_size: int
    predicted_size: int

    @classmethod
    def fixed_beam(cls, true_rank: int | None, predicted_size: int, beam_size: int) -> "OracleAnalysis":
        """Oracle convention for fixed beams: the rank if in the beam, else the whole beam."""
        return cls(true_rank, beam_size if true_rank is None else true_rank, predicted_size)


def oracle_rank(prediction_set, true_seq) -> int | None:
    """1-based position of ``true_seq`` (padding ignored) in a best-first set, or ``None``."""
    target = true_seq.content() if isinstance(true_seq, Sequence) else tuple(true_seq)
    for i, s in enumerate(prediction_set, 1):
        seq = s.sequence if isinstance(s, ScoredSequence) else s
        if seq.content() == target:
            return i
    return None


def mae_vs_oracle(analyses) -> float:
    """Mean of ``|predicted_size - oracle_size|``."""
    analyses = list(analyses)
    if not analyses:
        raise ValueError("mae_vs_oracle needs at least one item")
    return float(np.mean([abs(a.predicted_size - a.oracle_size) for a in analyses]))


def size_ratio(analyses) -> float:
    """Mean ``predicted_size / oracle_size`` over covered items (``nan`` if none)."""
    r = [a.predicted_size / a.oracle_size for a in analyses if a.true_rank is not None]
    return float(np.mean(r)) if r else math.nan


# ---------------------------------------------------------------------------
# reports

FIXED_METRICS = ("beam_coverage", "conditional_coverage", "global_coverage", "global_bound", "mae_vs_oracle",
                 "mean_set_size", "mean_size_ratio", "bound_holds", "beam_cov_lower")
DYNAMIC_METRICS = ("global_coverage", "exact_coverage", "guarantee", "mean_set_size", "mean_size_ratio",
                   "mae_vs_oracle", "uncovered_rate", "overflow_rate", "region_mismatch")


@dataclass
class RepRecord:
    """Metrics of one repetition.

    For dynamic runs ``conditional_coverage`` is the coverage conditional on
    the calibration draw, estimated on the test split, i.e. it equals
    ``global_coverage``.
    """

    rep: int
    n_calib: int
    n_test: int
    metrics: dict[str, float]
    per_length: dict[int, tuple[int, int]] = field(default_factory=dict)
    histogram: dict[int, int] = field(default_factory=dict)
    scatter: dict[tuple[int, int], int] = field(default_factory=dict)
    calibration: dict = field(default_factory=dict)


@dataclass
class CoverageReport:
    procedure: str
    config: dict
    records: list[RepRecord]
    aborted: list[tuple[int, str]] = field(default_factory=list)

    @property
    def repetitions(self) -> int:
        return len(self.records)

    @property
    def metric_names(self) -> tuple[str, ...]:
        return FIXED_METRICS if self.procedure == "fixed-beam" else DYNAMIC_METRICS

    def values(self, name: str) -> np.ndarray:
        return np.array([r.metrics[name] for r in self.records], dtype=float)

    def aggregate(self) -> dict[str, float]:
        """Mean, standard deviation and standard error of the mean of every metric (NaNs skipped)."""
        out: dict[str, float] = {}
        for name in self.metric_names:
            v = self.values(name)
            v = v[~np.isnan(v)]
            n = v.size
            out[name] = float(np.mean(v)) if n else math.nan
            out[name + "_std"] = float(np.std(v, ddof=1)) if n > 1 else math.nan
            out[name + "_sem"] = out[name + "_std"] / math.sqrt(n) if n > 1 else math.nan
        return out

    def per_length(self) -> dict[int, tuple[int, int]]:
        """Pooled ``length -> (covered, total)`` over repetitions."""
        acc: dict[int, list[int]] = {}
        for r in self.records:
            for l, (c, t) in r.per_length.items():
                a = acc.setdefault(l, [0, 0])
                a[0] += c
                a[1] += t
        return {l: (c, t) for l, (c, t) in sorted(acc.items())}

    def histogram(self) -> dict[int, int]:
        acc: dict[int, int] = {}
        for r in self.records:
            for s, c in r.histogram.items():
                acc[s] = acc.get(s, 0) + c
        return dict(sorted(acc.items()))

    def scatter(self) -> dict[tuple[int, int], int]:
        acc: dict[tuple[int, int], int] = {}
        for r in self.records:
            for k, c in r.scatter.items():
                acc[k] = acc.get(k, 0) + c
        return dict(sorted(acc.items()))

    def marginal_bound_rate(self) -> float:
        """Fraction of repetitions whose bound lies below the pooled mean global coverage.

        A second reading of the fixed-beam guarantee: the coverage in the
        bound is marginal over the in-beam calibration, so it can be compared
        with the coverage averaged over repetitions.
        """
        cov = float(np.mean(self.values("global_coverage")))
        return float(np.mean(self.values("global_bound") <= cov))


def _counts(values) -> dict[int, int]:
    u, c = np.unique(np.asarray(values, dtype=np.int64), return_counts=True)
    return {int(a): int(b) for a, b in zip(u, c)}


def _per_length(lengths, covered) -> dict[int, tuple[int, int]]:
    out = {}
    for l in np.unique(lengths):
        m = lengths == l
        out[int(l)] = (int(covered[m].sum()), int(m.sum()))
    return out


def _scatter(oracle, predicted) -> dict[tuple[int, int], int]:
    if len(oracle) == 0:
        return {}
    pairs, c = np.unique(np.stack([oracle, predicted], axis=1).astype(np.int64), axis=0, return_counts=True)
    return {(int(o), int(p)): int(n) for (o, p), n in zip(pairs, c)}


def _nanmean(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.mean(x)) if x.size else math.nan


def _pad_cols(tokens: np.ndarray, L: int, pad: int) -> np.ndarray:
    if tokens.shape[1] >= L:
        return tokens
    return np.concatenate([tokens, np.full((tokens.shape[0], L - tokens.shape[1]), pad, tokens.dtype)], axis=1)


def _lex_less(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise lexicographic ``a < b`` along the last axis (broadcasting)."""
    diff = a != b
    first = diff.argmax(axis=-1)[..., None]
    av = np.take_along_axis(a, first, axis=-1)[..., 0]
    bv = np.take_along_axis(np.broadcast_to(b, a.shape), first, axis=-1)[..., 0]
    return diff.any(axis=-1) & (av < bv)


# ---------------------------------------------------------------------------
# fixed-width beams


@dataclass(frozen=True)
class _BeamTruth:
    hit: np.ndarray
    true_score: np.ndarray
    rank: np.ndarray
    scores: np.ndarray
    valid: np.ndarray


def _beam_truth(model: ArsModel, conditions, truth: np.ndarray, width: int, max_len: int, ranking: str,
                convention: str) -> _BeamTruth:
    """Beam-search every condition and locate its true sequence in the beam."""
    pad = model.alphabet.padding
    beam = beam_search_arrays(model, conditions, width, max_len, ranking, convention)
    L = max(max_len, truth.shape[1])
    cand = beam.padded_tokens(L, pad)
    truth = _pad_cols(np.asarray(truth, dtype=np.int64), L, pad)
    match = beam.valid & np.all(cand == truth[:, None, :], axis=2)
    hit = match.any(axis=1)
    slot = match.argmax(axis=1)
    ts = np.where(hit, beam.score[np.arange(len(hit)), slot], NEG_INF)
    # rank by normalized score (token ids break ties), independent of the beam's ranking rule
    better = beam.valid & ((beam.score > ts[:, None])
                           | ((beam.score == ts[:, None]) & _lex_less(cand, truth[:, None, :])))
    rank = np.where(hit, better.sum(axis=1) + 1, 0)
    return _BeamTruth(hit, ts, rank, beam.score, beam.valid)


@dataclass(frozen=True)
class FixedBeamJob:
    task: GroundTruthTask
    model: ArsModel
    width: int
    alpha: float
    delta: float
    n_calib: int
    n_test: int
    seed: int
    max_len: int
    ranking: str = "normalized"
    convention: str = "log"


def fixed_beam_repetition(job: FixedBeamJob, rep: int) -> RepRecord:
    rng = derive_rng(job.seed, rep)
    (cc, ct), (tc, tt) = job.task.draw_split(rng, job.n_calib, job.n_test)
    cal_bt = _beam_truth(job.model, cc, ct, job.width, job.max_len, job.ranking, job.convention)
    cal = sub_beam_from_scores(cal_bt.true_score[cal_bt.hit], job.n_calib, job.alpha, job.delta, job.width,
                               job.max_len, job.ranking, job.convention)
    thr = NEG_INF if cal.threshold is NO_PRUNE else cal.threshold
    bt = _beam_truth(job.model, tc, tt, job.width, job.max_len, job.ranking, job.convention)
    predicted = (bt.valid & (bt.scores >= thr)).sum(axis=1)
    beam_size = bt.valid.sum(axis=1)
    covered = bt.hit & (bt.true_score >= thr)
    oracle = np.where(bt.hit, bt.rank, beam_size)
    lengths = (np.asarray(tt) != job.model.alphabet.padding).sum(axis=1)
    g = float(covered.mean())
    m = {
        "beam_coverage": float(bt.hit.mean()),
        "conditional_coverage": float(covered[bt.hit].mean()) if bt.hit.any() else math.nan,
        "global_coverage": g,
        "global_bound": cal.composite_guarantee,
        "mae_vs_oracle": float(np.abs(predicted - oracle).mean()),
        "mean_set_size": float(predicted.mean()),
        "mean_size_ratio": _nanmean(predicted[covered] / oracle[covered]),
        "bound_holds": float(g >= cal.composite_guarantee),
        "beam_cov_lower": cal.beam_cov_lower,
    }
    return RepRecord(rep, job.n_calib, job.n_test, m, _per_length(lengths, covered), _counts(predicted),
                     _scatter(oracle, predicted), cal.to_dict())


# ---------------------------------------------------------------------------
# dynamic beams


@dataclass(frozen=True)
class DynamicJob:
    task: GroundTruthTask
    model: ArsModel
    alpha: float
    max_len: int
    n_calib: int
    n_test: int
    seed: int
    cap: int | None = DEFAULT_BEAM_CAP
    convention: str = "log"


def _fit_tokens(model: ArsModel, tokens: np.ndarray, L: int):
    """Pad or cut true sequences to ``L`` columns; ``ok`` flags those terminating within ``L``."""
    a = model.alphabet
    tokens = _pad_cols(np.asarray(tokens, dtype=np.int64), L, a.padding)
    content = (tokens != a.padding).sum(axis=1)
    term = tokens[np.arange(len(tokens)), np.maximum(content - 1, 0)] == a.terminator
    ok = (content <= L) & term & (content > 0)
    return tokens[:, :L], ok, content


def dynamic_repetition(job: DynamicJob, rep: int) -> RepRecord:
    model, L = job.model, job.max_len
    rng = derive_rng(job.seed, rep)
    (cc, ct), (tc, tt) = job.task.draw_split(rng, job.n_calib, job.n_test)
    ct, ok, _ = _fit_tokens(model, ct, L)
    keep = np.flatnonzero(ok)
    if keep.size == 0:
        raise CalibrationError(f"no calibration sequence terminates within max_len={L}")
    scores, _ = true_scores(model, take(cc, keep), ct[keep], job.convention)
    th = dynamic_thresholds_from_scores(scores, job.alpha, job.convention, int((~ok).sum()))

    n = job.n_test
    tt, tok, lengths = _fit_tokens(model, tt, L)
    beams = decode_dynamic_batch(model, tc, th, job.cap)
    match = np.all(beams.tokens == tt[beams.owner], axis=1) & tok[beams.owner]
    covered = np.zeros(n, dtype=bool)
    covered[beams.owner[match]] = True
    starts = np.searchsorted(beams.owner, np.arange(n))
    rank = np.zeros(n, dtype=np.int64)
    rows = np.flatnonzero(match)
    rank[beams.owner[rows]] = rows - starts[beams.owner[rows]] + 1
    sizes = beams.sizes()

    # region membership from the true sequence's own scores; used for overflowed items
    region = np.zeros(n, dtype=bool)
    idx = np.flatnonzero(tok)
    if idx.size:
        s, cum = true_scores(model, take(tc, idx), tt[idx], job.convention)
        region[idx] = region_contains_scores(th, s, cum)
    over = beams.overflow
    mismatch = int((region[~over] != covered[~over]).sum())
    covered = np.where(over, region, covered)

    fine = ~over
    cov_fine = covered & fine
    ratio = sizes[cov_fine] / rank[cov_fine]
    m = {
        "global_coverage": float(covered.mean()),
        "exact_coverage": th.exact_coverage,
        "guarantee": th.lower_bound,
        "mean_set_size": _nanmean(sizes[fine]),
        "mean_size_ratio": _nanmean(ratio),
        "mae_vs_oracle": _nanmean(np.abs(sizes[cov_fine] - rank[cov_fine])),
        "uncovered_rate": float(1.0 - covered.mean()),
        "overflow_rate": float(over.mean()),
        "region_mismatch": float(mismatch),
    }
    m["conditional_coverage"] = m["global_coverage"]
    return RepRecord(rep, job.n_calib, n, m, _per_length(lengths, covered), _counts(sizes[fine]),
                     _scatter(rank[cov_fine], sizes[cov_fine]), th.to_dict())


# ---------------------------------------------------------------------------
# drivers


def _run_one(args):
    fn, job, rep = args
    try:
        return fn(job, rep), None
    except CalibrationError as exc:
        return None, (rep, str(exc))


def _run(fn, job, reps: int, workers: int):
    args = [(fn, job, r) for r in range(reps)]
    if workers > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_one, args, chunksize=max(1, reps // (4 * workers))))
    else:
        results = [_run_one(a) for a in args]
    records = [r for r, _ in results if r is not None]
    aborted = [e for _, e in results if e is not None]
    return records, aborted


def default_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def run_fixed_beam_experiment(task: GroundTruthTask, model: ArsModel, width: int, alpha: float, delta: float,
                              reps: int, n_calib: int, n_test: int, seed: int, max_len: int | None = None,
                              ranking: str = "normalized", convention: str = "log",
                              workers: int = 1) -> CoverageReport:
    """Repeated sub-beam calibration and evaluation on fresh splits of ``task``."""
    job = FixedBeamJob(task, model, width, alpha, delta, n_calib, n_test, seed, max_len or task.max_len, ranking,
                       convention)
    records, aborted = _run(fixed_beam_repetition, job, reps, workers)
    config = {"procedure": "fixed-beam", "width": width, "alpha": alpha, "delta": delta, "reps": reps,
              "n_calib": n_calib, "n_test": n_test, "seed": seed, "max_len": job.max_len, "ranking": ranking,
              "score_convention": convention}
    return CoverageReport("fixed-beam", config, records, aborted)


def run_dynamic_experiment(task: GroundTruthTask, model: ArsModel, alpha: float, max_len: int, reps: int,
                           n_calib: int, n_test: int, seed: int, cap: int | None = DEFAULT_BEAM_CAP,
                           convention: str = "log", workers: int = 1) -> CoverageReport:
    """Repeated dynamic calibration and decoding on fresh splits of ``task``.

    Test items whose beam exceeds ``cap`` are counted in ``overflow_rate``;
    their coverage falls back to region membership of the true sequence,
    which is what the decoder would have returned.
    """
    job = DynamicJob(task, model, alpha, max_len, n_calib, n_test, seed, cap, convention)
    records, aborted = _run(dynamic_repetition, job, reps, workers)
    config = {"procedure": "dynamic", "alpha": alpha, "max_len": max_len, "reps": reps, "n_calib": n_calib,
              "n_test": n_test, "seed": seed, "cap": cap, "score_convention": convention}
    return CoverageReport("dynamic", config, records, aborted)


# ---------------------------------------------------------------------------
# CSV output

def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def _write(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def aggregate_row(report: CoverageReport) -> dict:
    """Configuration columns followed by the aggregate metrics."""
    agg = report.aggregate()
    c = report.config
    row: dict = {"procedure": report.procedure}
    if report.procedure == "fixed-beam":
        row.update(width=c["width"], alpha=c["alpha"], delta=c["delta"], confidence=1.0 - c["alpha"])
        order = ("beam_coverage", "conditional_coverage", "mae_vs_oracle", "global_bound", "global_coverage")
        rename = {"mae_vs_oracle": "mae"}
    else:
        row.update(alpha=c["alpha"], confidence=1.0 - c["alpha"], max_len=c["max_len"])
        order = ("global_coverage", "guarantee", "mean_set_size", "mean_size_ratio")
        rename = {"global_coverage": "coverage", "mean_set_size": "mean_size", "mean_size_ratio": "mean_ratio"}
    rest = [m for m in report.metric_names if m not in order]
    for m in list(order) + rest:
        name = rename.get(m, m)
        row[name] = agg[m]
        row[name + "_sem"] = agg[m + "_sem"]
        row[name + "_std"] = agg[m + "_std"]
    if report.procedure == "fixed-beam":
        row["bound_holding_rate"] = agg["bound_holds"]
        row["marginal_bound_rate"] = report.marginal_bound_rate() if report.records else math.nan
    row["repetitions"] = report.repetitions
    row["aborted"] = len(report.aborted)
    return row


def emit_report(reports, outdir, prefix: str | None = None) -> dict[str, Path]:
    """Write aggregate, per-repetition, per-length, histogram and scatter CSV files.

    ``reports`` is one :class:`CoverageReport` or a list of them sharing a
    procedure (one aggregate row each).  Returns the written paths by kind.
    """
    if isinstance(reports, CoverageReport):
        reports = [reports]
    if not reports:
        raise ValueError("no reports to emit")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    prefix = prefix or reports[0].procedure.replace("-", "_")
    paths = {k: outdir / f"{prefix}_{k}.csv" for k in ("aggregate", "reps", "per_length", "histogram", "scatter")}

    rows = [aggregate_row(r) for r in reports]
    header = list(rows[0])
    _write(paths["aggregate"], header, [[r.get(h) for h in header] for r in rows])

    metrics = reports[0].metric_names
    _write(paths["reps"], ["config", "rep", "n_calib", "n_test", *metrics],
           [[i, rec.rep, rec.n_calib, rec.n_test, *[rec.metrics[m] for m in metrics]]
            for i, r in enumerate(reports) for rec in r.records])
    _write(paths["per_length"], ["config", "alpha", "length", "covered", "total", "coverage"],
           [[i, r.config["alpha"], l, c, t, c / t] for i, r in enumerate(reports)
            for l, (c, t) in r.per_length().items()])
    hist_rows = []
    for i, r in enumerate(reports):
        h = r.histogram()
        top = max(h) if h else 0
        # contiguous bins from 0 to the largest observed size
        hist_rows += [[i, r.config["alpha"], s, h.get(s, 0)] for s in range(top + 1)]
    _write(paths["histogram"], ["config", "alpha", "set_size", "count"], hist_rows)
    _write(paths["scatter"], ["config", "alpha", "oracle_size", "predicted_size", "count"],
           [[i, r.config["alpha"], o, p, c] for i, r in enumerate(reports) for (o, p), c in r.scatter().items()])
    return paths


def _parse(v: str):
    if v == "":
        return None
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v


def read_csv(path) -> list[dict]:
    """Rows of an emitted CSV with numbers parsed back (ints, then floats)."""
    with open(path, encoding="utf-8", newline="") as f:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(f)]


def report_to_dict(report: CoverageReport) -> dict:
    """JSON-ready summary: configuration, aggregates and aborted repetitions."""
    return {"procedure": report.procedure, "config": report.config, "aggregate": report.aggregate(),
            "repetitions": report.repetitions, "aborted": [list(a) for a in report.aborted],
            "records": [{**asdict(r), "per_length": {str(k): list(v) for k, v in r.per_length.items()},
                         "histogram": {str(k): v for k, v in r.histogram.items()},
                         "scatter": [[o, p, c] for (o, p), c in r.scatter.items()]} for r in report.records]}
