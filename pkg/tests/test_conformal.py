import math

import numpy as np
import pytest

from conftest import A, B, LOG54, random_models
from oracles import beta_quantile_quad, kth_smallest
from confbeam.conformal import (
    NO_PRUNE,
    BeamOverflowError,
    CalibrationError,
    DynamicThresholds,
    LengthGroupCalibration,
    SubBeamCalibration,
    beta_quantile,
    calibrate_dynamic,
    calibrate_length_groups,
    calibrate_sub_beam,
    clopper_pearson_lower,
    conditional_coverage_law,
    decode_dynamic,
    decode_dynamic_batch,
    decode_length_groups,
    dynamic_thresholds_from_scores,
    filter_beam,
    guarantee,
    k_schedule,
    passes,
    predict_sub_beam,
    region_contains,
    split_threshold,
    sub_beam_from_scores,
    threshold_rank,
    true_scores,
)
from confbeam.decoding import beam_search
from confbeam.models import LogitChainModel, LogitChainTask, derive_rng, enumerate_support, random_tabular_model


# --- numeric kernels -----------------------------------------------------------

def test_beta_quantile_closed_forms():
    assert beta_quantile(0.3, 1, 1) == pytest.approx(0.3, abs=1e-12)
    assert beta_quantile(0.05, 10, 1) == pytest.approx(0.05 ** 0.1, abs=1e-12)
    assert 0.05 ** 0.1 == pytest.approx(0.74113, abs=1e-5)


def test_beta_quantile_quadrature():
    assert beta_quantile(0.05, 950, 51) == pytest.approx(beta_quantile_quad(0.05, 950, 51), abs=1e-8)


def test_beta_quantile_rejects_bad_input():
    for args in [(0.0, 1, 1), (1.0, 1, 1), (0.5, 0, 1), (0.5, 1, -1), (0.5, math.inf, 1)]:
        with pytest.raises(ValueError):
            beta_quantile(*args)


def test_clopper_pearson():
    assert clopper_pearson_lower(0, 10, 0.05) == 0.0
    assert clopper_pearson_lower(10, 10, 0.05) == pytest.approx(0.05 ** 0.1)
    assert clopper_pearson_lower(7, 10, 0.05) == beta_quantile(0.05, 7, 4)
    with pytest.raises(ValueError):
        clopper_pearson_lower(11, 10, 0.05)


# --- split conformal -------------------------------------------------------------

def test_split_threshold_examples():
    cal = split_threshold([0.1 * i for i in range(1, 11)], 0.25)
    assert cal.k == 2 and cal.threshold == pytest.approx(0.2)
    scores = np.random.default_rng(0).normal(size=99)
    cal = split_threshold(scores, 0.05)
    assert cal.k == 5 and cal.threshold == kth_smallest(scores, 5)
    cal = split_threshold(np.arange(5.0), 0.1)
    assert cal.k == 0 and cal.threshold is NO_PRUNE and cal.accepts(-1e300)
    with pytest.raises(CalibrationError):
        split_threshold([], 0.1)
    with pytest.raises(ValueError):
        threshold_rank(1.0, 10)


def test_threshold_rank_representation_error():
    # 0.29 * 100 evaluates to 28.999999999999996 in floating point
    assert threshold_rank(0.29, 99) == 29
    assert threshold_rank(0.9, 1) == 1   # capped at n


def test_passes_non_strict():
    assert passes(-1.0, -2.0, -1.0)
    assert not passes(-1.0 - 1e-15, -2.0, -1.0)
    assert passes(-5.0, -5.0, NO_PRUNE)
    assert not passes(0.0, -math.inf, NO_PRUNE)


# --- sub-beam sets -----------------------------------------------------------------

def test_composite_guarantee_formula():
    cal = sub_beam_from_scores(np.linspace(-1, 0, 9500), 10000, 0.05, 0.05, 5, 4)
    assert cal.beam_cov_lower == beta_quantile(0.05, 9500, 501)
    assert cal.composite_guarantee == pytest.approx(0.95 * beta_quantile_quad(0.05, 9500, 501), abs=1e-8)
    assert SubBeamCalibration.from_dict(cal.to_dict()) == cal


def test_sub_beam_perfect_coverage(hand, ab):
    w = ab.terminator
    calib = [("x", (A, w))] * 6 + [("x", (B, w))] * 3 + [("x", (A, B, w))]
    cal = calibrate_sub_beam(hand, calib, width=5, max_len=3, alpha=0.2, delta=0.1)
    assert cal.n_beta == cal.n_total == 10
    assert cal.beam_cov_lower == pytest.approx(0.1 ** (1 / 10))
    # k = floor(0.2 * 11) = 2: second smallest in-beam score
    scores = sorted([LOG54 / 2] * 6 + [math.log(0.4) / 2] * 3 + [math.log(0.06) / 3])
    assert cal.inner.k == 2 and cal.threshold == pytest.approx(scores[1])


def test_sub_beam_empty_subgroup(hand, ab):
    with pytest.raises(CalibrationError, match="too weak"):
        calibrate_sub_beam(hand, [("x", (A, B, ab.terminator))], width=1, max_len=3, alpha=0.1, delta=0.1)
    with pytest.raises(CalibrationError):
        calibrate_sub_beam(hand, [], width=1, max_len=3, alpha=0.1, delta=0.1)


def test_predict_sub_beam_extremes(hand):
    base = sub_beam_from_scores([-10.0] * 50, 50, 0.1, 0.1, 3, 3)
    assert [s.sequence for s in predict_sub_beam(hand, "x", base)] == beam_search(hand, "x", 3, 3).sequences()
    high = sub_beam_from_scores([1.0] * 50, 50, 0.1, 0.1, 3, 3)
    assert predict_sub_beam(hand, "x", high) == []
    none = sub_beam_from_scores([1.0] * 5, 5, 0.1, 0.1, 3, 3)
    assert none.threshold is NO_PRUNE and len(filter_beam(beam_search(hand, "x", 3, 3), none)) == 3


# --- dynamic calibration ----------------------------------------------------------------

def test_k_schedule_example():
    assert k_schedule(99, 0.05, 2) == [5, 4]
    th = dynamic_thresholds_from_scores(np.random.default_rng(0).normal(size=(99, 2)), 0.05)
    assert th.ks == [5, 4] and [s.n for s in th.steps] == [94, 90]
    assert th.exact_coverage == pytest.approx(0.91)
    assert guarantee(0.05, 2, th) == (pytest.approx(0.91), pytest.approx(0.9025))


def test_all_k_zero_boundary():
    th = dynamic_thresholds_from_scores(np.zeros((20, 3)), 0.01)
    assert th.thresholds == [NO_PRUNE] * 3 and th.exact_coverage == 1.0


def test_hand_scored_calibration():
    s1 = [0.5, 0.1, 0.9, 0.3, 0.7, 0.2, 0.8, 0.6, 0.4]
    s2 = [0.15, 0.99, 0.05, 0.55, 0.35, 0.01, 0.65, 0.45, 0.25]
    th = dynamic_thresholds_from_scores(np.column_stack([s1, s2]), 0.2)
    assert th.ks == [2, 1]
    assert th.thresholds[0] == kth_smallest(s1, 2)            # 0.2
    survivors = [j for j in range(9) if s1[j] > 0.2]
    assert th.thresholds[1] == min(s2[j] for j in survivors)   # 0.05


def test_exhaustion_names_the_step():
    with pytest.raises(CalibrationError, match="step 1 of 3"):
        dynamic_thresholds_from_scores(np.zeros((1, 3)), 0.6)


def test_calibrate_dynamic_rejects_long_items(hand, ab, caplog):
    w = ab.terminator
    calib = [("x", (A, w))] * 8 + [("x", (A, B, w))] * 2
    th = calibrate_dynamic(hand, calib, 0.1, max_len=2)
    assert th.n_rejected == 2 and th.n0 == 8
    assert "rejected 2" in caplog.text
    with pytest.raises(CalibrationError):
        calibrate_dynamic(hand, [("x", (A, B, w))], 0.1, max_len=2)


def test_dynamic_artifact_roundtrip():
    th = dynamic_thresholds_from_scores(np.random.default_rng(1).normal(size=(50, 3)), 0.1, meta={"seed": 4})
    d = th.to_dict()
    assert [set(s) for s in d["steps"]] == [{"step", "k", "n", "threshold"}] * 3
    assert d["guarantee"] == pytest.approx(0.9 ** 3) and d["seed"] == 4
    assert DynamicThresholds.from_dict(d) == th


# --- dynamic decoding ----------------------------------------------------------------------

def _region_oracle(m, cid, th):
    return {s.content() for s, _ in enumerate_support(m, cid, th.max_len) if region_contains(th, m, cid, s)}


def _decoded(m, cid, th, **kw):
    out = decode_dynamic(m, cid, th, **kw)
    return [s.sequence.content() for s in out]


def test_no_prune_returns_full_support(ab):
    m = random_tabular_model(np.random.default_rng(3), 2, 2)
    th = DynamicThresholds.from_thresholds([None, None])
    full = {s.content() for s, _ in enumerate_support(m, "x", 2)}
    assert set(_decoded(m, "x", th)) == full
    assert all(region_contains(th, m, "x", s) for s in full)


def test_high_thresholds_give_empty_set(hand):
    assert decode_dynamic(hand, "x", DynamicThresholds.from_thresholds([1.0, 1.0, 1.0])) == []


def test_region_identity_small_models():
    rng = np.random.default_rng(5)
    for m in random_models(30, seed=9):
        L = m.max_depth
        th = DynamicThresholds.from_thresholds(rng.uniform(-1.5, 0, size=L).tolist())
        dec = _decoded(m, "x", th)
        assert len(dec) == len(set(dec)) and set(dec) == _region_oracle(m, "x", th)


def test_decoded_set_sorted_and_scored(hand):
    th = DynamicThresholds.from_thresholds([None, None, None])
    out = decode_dynamic(hand, "x", th)
    scores = [s.normalized_score for s in out]
    assert scores == sorted(scores, reverse=True)
    assert out[0].log_prob == pytest.approx(LOG54)


def test_threshold_setting_item_is_contained(hand, ab):
    w = ab.terminator
    calib = [("x", (A, w))] * 5 + [("x", (B, w))] * 4 + [("x", (A, B, w))]
    th = calibrate_dynamic(hand, calib, 0.1, max_len=3)
    assert th.thresholds[0] is not NO_PRUNE
    for _, seq in calib:
        if region_contains(th, hand, "x", seq):
            continue
        s = true_scores(hand, ["x"], np.array([list(seq) + [ab.padding] * (3 - len(seq))]))[0][0]
        assert any(s[l] < (th.thresholds[l] if th.thresholds[l] is not None else -np.inf) for l in range(3))
    # the item whose score equals the first threshold survives that step (non-strict)
    assert any(region_contains(th, hand, "x", seq) for _, seq in calib)


def test_nesting_in_alpha():
    m = LogitChainModel.random(seed=4, n_base=3, max_len=3)
    c, t = LogitChainTask(m).draw(derive_rng(0, 0), 300)
    scores, _ = true_scores(m, c, t)
    x = np.random.default_rng(2).standard_normal((30, 2))
    small = dynamic_thresholds_from_scores(scores, 0.02)
    large = dynamic_thresholds_from_scores(scores, 0.1)
    assert all(a <= b for a, b in zip(small.threshold_array(), large.threshold_array()))
    for i in range(30):
        assert set(_decoded(m, x[i], small)) >= set(_decoded(m, x[i], large))


def test_overflow_carries_partial_beam(hand):
    th = DynamicThresholds.from_thresholds([None, None, None])
    with pytest.raises(BeamOverflowError) as exc:
        decode_dynamic(hand, "x", th, cap=1)
    assert exc.value.step == 1 and len(exc.value.partial) == 2 and exc.value.cap == 1
    assert len(decode_dynamic(hand, "x", th, cap=None)) == 3


@pytest.mark.parametrize("convention", ["log", "prob"])
def test_batch_decoder_matches_reference(convention):
    m = LogitChainModel.random(seed=3, n_base=3, max_len=4)
    c, t = LogitChainTask(m).draw(derive_rng(1, 0), 400)
    th = dynamic_thresholds_from_scores(true_scores(m, c, t, convention)[0], 0.05, convention)
    x = np.random.default_rng(9).standard_normal((150, 2))
    for cap in (None, 8):
        beams = decode_dynamic_batch(m, x, th, cap)
        sets = beams.sets(m.alphabet)
        for i in range(150):
            try:
                ref = decode_dynamic(m, x[i], th, cap)
            except BeamOverflowError:
                assert beams.overflow[i] and sets[i] == []
                continue
            assert not beams.overflow[i]
            key = lambda s: (s.sequence.content(), s.log_prob, s.normalized_score)  # noqa: E731
            assert [key(s) for s in sets[i]] == [key(s) for s in ref]


def test_batch_decoder_on_tabular():
    for m in random_models(10, seed=12):
        th = DynamicThresholds.from_thresholds([-1.0] * m.max_depth)
        b = decode_dynamic_batch(m, ["x"], th)
        assert [s.sequence.content() for s in b.sets(m.alphabet)[0]] == _decoded(m, "x", th)


# --- length groups ----------------------------------------------------------------------

def _length_task():
    m = LogitChainModel.random(seed=8, n_base=2, max_len=4, termination_bias=0.5)
    c, t = LogitChainTask(m).draw(derive_rng(3, 0), 400)
    pad = m.alphabet.padding
    calib = [(c[i], tuple(int(v) for v in t[i] if v != pad)) for i in range(len(t))]
    return m, calib


def test_single_bucket_reduces_to_dynamic():
    m, calib = _length_task()
    lg = calibrate_length_groups(m, calib, 0.1, [4])
    th = calibrate_dynamic(m, calib, 0.1, 4)
    assert lg.calibrations[0].thresholds == th.thresholds
    x = np.random.default_rng(0).standard_normal((20, 2))
    for i in range(20):
        assert [s.sequence.content() for s in decode_length_groups(m, x[i], lg)] == _decoded(m, x[i], th)


def test_bucket_assignment_by_content_length():
    m, calib = _length_task()
    lg = calibrate_length_groups(m, calib, 0.1, [2, 4])
    n_short = sum(1 for _, s in calib if len(s) <= 2)
    assert lg.calibrations[0].n0 == n_short and lg.calibrations[1].n0 == len(calib) - n_short
    assert lg.buckets == ((1, 2), (3, 4)) and lg.bucket_of(3) == 1
    assert LengthGroupCalibration.from_dict(lg.to_dict()) == lg
    with pytest.raises(CalibrationError):
        calibrate_length_groups(m, calib, 0.1, [1, 4], min_count=10**6)
    with pytest.raises(ValueError):
        calibrate_length_groups(m, calib, 0.1, [3, 2])


def test_phase_two_prunes_with_bucket_thresholds(hand, ab):
    # bucket [1,2] is lenient; bucket [3,3] has a strict step-3 threshold
    lenient = DynamicThresholds.from_thresholds([None, None])
    strict = DynamicThresholds.from_thresholds([None, None, -0.5])
    lg = LengthGroupCalibration(((1, 2), (3, 3)), (lenient, strict))
    assert lg.envelope() == [None, None, -0.5]
    out = {s.sequence.content() for s in decode_length_groups(hand, "x", lg)}
    w = ab.terminator
    # [a, b, w] has score log(0.06)/3 < -0.5: passes the envelope up to step 2 only
    assert (A, B, w) not in out and {(A, w), (B, w)} <= out


# --- guarantees ----------------------------------------------------------------------------

def test_guarantee_lower_bounds():
    assert guarantee(0.01, 5)[1] == pytest.approx(0.99 ** 5)
    assert guarantee(0.05, 5, n0=200) == (pytest.approx(1 - sum(k_schedule(200, 0.05, 5)) / 201), 0.95 ** 5)
    assert guarantee(0.1, 2)[0] is None


def test_conditional_coverage_law():
    law = conditional_coverage_law(99, k_schedule(99, 0.05, 2))
    assert (law.a, law.b) == (91, 9) and law.mean == pytest.approx(0.91)
    assert conditional_coverage_law(10, [0, 0]).degenerate
    with pytest.raises(ValueError):
        conditional_coverage_law(3, [2, 2])
