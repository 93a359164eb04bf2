import math

import numpy as np
import pytest

from conftest import A, B, LOG54, greedy_trap, random_models
from confbeam.decoding import greedy_decode
from confbeam.models import (
    ADDITION_ALPHABET,
    DEFAULT_PAIRS,
    DatasetTask,
    EnumerationGuardError,
    LogitChainModel,
    LogitChainTask,
    MissingEntryError,
    NoisyOracleAdditionModel,
    TabularModel,
    TabularTask,
    TraceModel,
    answer_sequence,
    derive_rng,
    enumerate_support,
    generate_additions_dataset,
    parse_question,
    random_tabular_model,
    read_dataset,
    record_trace,
    sample_sequences,
    sequence_log_prob,
    stable_seed,
    write_dataset,
)
from confbeam.models.base import check_distribution


# --- tabular model and log-probabilities -----------------------------------

def test_sequence_log_prob_hand(hand, ab):
    w, p = ab.terminator, ab.padding
    assert sequence_log_prob(hand, "x", (A, w)) == pytest.approx(LOG54, abs=1e-15)
    assert sequence_log_prob(hand, "x", (A, w, p, p)) == sequence_log_prob(hand, "x", (A, w))
    assert sequence_log_prob(hand, "x", ab.sequence((B, w))) == pytest.approx(math.log(0.4))


def test_sequence_log_prob_errors(hand, ab):
    with pytest.raises(ValueError):
        sequence_log_prob(hand, "x", (A, 7))
    with pytest.raises(ValueError):
        sequence_log_prob(hand, "x", (ab.padding, A))
    with pytest.raises(MissingEntryError):
        sequence_log_prob(hand, "missing", (A, ab.terminator))


def test_tabular_validation(ab):
    with pytest.raises(ValueError):
        TabularModel(ab, {("x", ()): [0.5, 0.5, 0.0, 0.1]}, 2)   # padding mass
    with pytest.raises(ValueError):
        TabularModel(ab, {("x", ()): [0.5, 0.4, 0.0, 0.0]}, 2)   # does not sum to one
    with pytest.raises(ValueError):
        TabularModel(ab, {("x", ()): [1.0, 0.0]}, 2)


def test_padding_point_mass_after_terminator(hand, ab):
    row = hand.next_token_log_probs("x", (A, ab.terminator))
    assert row[ab.padding] == 0.0 and np.all(np.isneginf(np.delete(row, ab.padding)))


def test_batch_matches_scalar_queries(hand, ab):
    prefixes = np.array([[A, B], [A, ab.terminator], [B, ab.terminator]])
    batch = hand.batch_next_log_probs(["x"] * 3, prefixes)
    for i, pre in enumerate(prefixes):
        assert np.array_equal(batch[i], hand.next_token_log_probs("x", pre))


def test_enumerate_support_hand(hand, ab):
    w, p = ab.terminator, ab.padding
    sup = {s.content(): lp for s, lp in enumerate_support(hand, "x", 2)}
    assert sup[(A, w)] == pytest.approx(LOG54, abs=1e-15)
    assert sup[(B, w)] == pytest.approx(math.log(0.4), abs=1e-15)
    assert (A, B) in sup           # live at L=2, unterminated
    assert all(len(s.tokens) == 2 for s, _ in enumerate_support(hand, "x", 2))


def test_enumerate_support_single_step(ab):
    m = random_tabular_model(np.random.default_rng(1), 2, 3, zero_prob=0.0)
    sup = enumerate_support(m, "x", 1)
    assert len(sup) <= 3
    assert {s.tokens for s, _ in sup} <= {(0,), (1,), (ab.terminator,)}


def test_enumerate_support_mass_and_guard():
    for m in random_models(20, seed=3):
        sup = enumerate_support(m, "x", m.max_depth)
        total = sum(math.exp(lp) for _, lp in sup)
        assert total == pytest.approx(1.0, abs=1e-9)
        # every prefix terminates by max_depth: all mass is on terminated sequences
        term = sum(math.exp(lp) for s, lp in sup if m.alphabet.terminator in s.tokens)
        assert term == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(EnumerationGuardError):
        enumerate_support(m, "x", 30)


def test_random_tabular_min_len():
    m = random_tabular_model(np.random.default_rng(0), 3, 4, conditions=("u", "v"), min_len=4)
    for cid in ("u", "v"):
        for s, _ in enumerate_support(m, cid, 4):
            assert s.content()[-1] == m.alphabet.terminator and len(s.content()) == 4


def test_distribution_validity_everywhere():
    for m in random_models(10, seed=4):
        for (_, prefix), lp in m.entries():
            check_distribution(lp)
    lc = LogitChainModel.random(seed=2, n_base=3, max_len=4)
    x = np.random.default_rng(0).standard_normal((50, 2))
    for l in range(4):
        pre = np.zeros((50, l), dtype=np.int64)
        rows = lc.batch_next_log_probs(x, pre)
        np.testing.assert_allclose(np.exp(rows).sum(axis=1), 1.0, atol=1e-9)


# --- logit chain -------------------------------------------------------------

def test_logit_chain_batch_equals_scalar():
    m = LogitChainModel.random(seed=5, n_base=3, max_len=4, dim=3, min_len=2)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((20, 3))
    for l in range(4):
        pre = rng.integers(0, 3, size=(20, l))
        if l >= 2:
            pre[:5, 1] = m.alphabet.terminator
            pre[:5, 2:] = m.alphabet.padding
        batch = m.batch_next_log_probs(x, pre)
        for i in range(20):
            assert np.array_equal(batch[i], m.next_token_log_probs(x[i], pre[i]))


def test_logit_chain_length_limits():
    m = LogitChainModel.random(seed=5, n_base=2, max_len=3, min_len=2)
    x = np.zeros(2)
    assert m.next_token_log_probs(x, ())[m.alphabet.terminator] == -np.inf
    row = m.next_token_log_probs(x, (0, 1))
    assert row[m.alphabet.terminator] == 0.0
    t = m.tempered(0.5)
    assert t.temperature == 0.5 and not np.array_equal(t.next_token_log_probs(x, (0,)), m.next_token_log_probs(x, (0,)))


def test_sampling_matches_model_probabilities(hand, ab):
    rng = np.random.default_rng(0)
    toks = sample_sequences(hand, ["x"] * 40000, rng, 3)
    w = ab.terminator
    freq = np.mean(np.all(toks[:, :2] == [A, w], axis=1))
    assert abs(freq - 0.54) < 4 * math.sqrt(0.54 * 0.46 / 40000)


def test_tasks_are_seeded():
    m = LogitChainModel.random(seed=1)
    task = LogitChainTask(m)
    c1, t1 = task.draw(derive_rng(7, 3), 50)
    c2, t2 = task.draw(derive_rng(7, 3), 50)
    assert np.array_equal(c1, c2) and np.array_equal(t1, t2)
    c3, _ = task.draw(derive_rng(7, 4), 50)
    assert not np.array_equal(c1, c3)
    tab = TabularTask(random_tabular_model(np.random.default_rng(0), 2, 3, conditions=("p", "q")))
    c, t = tab.draw(np.random.default_rng(0), 10)
    assert set(c) <= {"p", "q"} and t.shape == (10, 3)


def test_stable_seed_is_stable():
    assert stable_seed("a", 1, (2, 3)) == stable_seed("a", 1, (2, 3))
    assert stable_seed("a", 1) != stable_seed("a", 2)


def test_dataset_task_splits_without_replacement():
    seqs = [answer_sequence(f"{i}+1=") for i in range(30)]
    task = DatasetTask(ADDITION_ALPHABET, [f"{i}+1=" for i in range(30)], seqs, max_len=2)
    assert task.n_dropped == 21                     # answers 10..30 need three tokens
    (cc, _), (tc, _) = task.draw_split(np.random.default_rng(0), 6, 3)
    assert len(set(cc) | set(tc)) == 9
    with pytest.raises(ValueError):
        task.draw_split(np.random.default_rng(0), 8, 4)


# --- additions ---------------------------------------------------------------

def test_default_pairs():
    assert DEFAULT_PAIRS == ((3, 3), (2, 4), (3, 4), (4, 4), (2, 5), (3, 5), (4, 5), (5, 5), (2, 8), (4, 6), (3, 7))


def test_worked_addition_example():
    s = answer_sequence("1789+111=")
    assert ADDITION_ALPHABET.decode(s.tokens) == ["1", "9", "0", "0", "</s>"]
    assert parse_question("1789+111=") == (1789, 111)
    with pytest.raises(ValueError):
        parse_question("1789-111=")


def test_generated_dataset_arithmetic_and_counts():
    items = generate_additions_dataset(3, pairs=((3, 3), (2, 5)), samples_per_pair=40, repeats=3)
    assert len(items) == 100 * 100 + 2 * 40 * 3
    for q, s in items:
        x, y = parse_question(q)
        assert int("".join(ADDITION_ALPHABET.decode(s.content()[:-1]))) == x + y
        assert s.content()[-1] == ADDITION_ALPHABET.terminator
    tail = items[10000:]
    for q, _ in tail[:120]:
        x, y = parse_question(q)
        assert sorted((len(str(x)), len(str(y)))) == [3, 3]
    for q, _ in tail[120:]:
        x, y = parse_question(q)
        assert sorted((len(str(x)), len(str(y)))) == [2, 5]


def test_generate_is_deterministic_and_validates():
    a = generate_additions_dataset(1, samples_per_pair=5, repeats=2, include_small=False)
    b = generate_additions_dataset(1, samples_per_pair=5, repeats=2, include_small=False)
    assert [q for q, _ in a] == [q for q, _ in b]
    assert len(a) == len(DEFAULT_PAIRS) * 5 * 2
    with pytest.raises(ValueError):
        generate_additions_dataset(1, pairs=((0, 3),))


def test_dataset_roundtrip(tmp_path):
    items = generate_additions_dataset(2, pairs=((2, 2),), samples_per_pair=5, repeats=1, include_small=False)
    write_dataset(items, tmp_path / "d.jsonl")
    back = read_dataset(tmp_path / "d.jsonl")
    assert [(q, s) for _, q, s in back] == items
    assert back[0][0] == "add-000000"


def test_noisy_oracle_greedy_recovers_sum():
    rng = np.random.default_rng(11)
    for T in (0.3, 1.0, 5.0):
        m = NoisyOracleAdditionModel(digit_confusion_rate=0.45, noise_temperature=T, rng_seed=3)
        for x, y in rng.integers(0, 10**6, size=(300, 2)):
            q = f"{x}+{y}="
            assert greedy_decode(m, q, 9).sequence == answer_sequence(q)


def test_noisy_oracle_example_and_log_prob():
    m = NoisyOracleAdditionModel(digit_confusion_rate=0.1, rng_seed=0)
    s = greedy_decode(m, "12+30=", 5)
    assert ADDITION_ALPHABET.decode(s.tokens) == ["4", "2", "</s>"]
    # step-by-step accumulation oracle
    toks = answer_sequence("2+2=").tokens
    acc = sum(float(m.next_token_log_probs("2+2=", toks[:i])[t]) for i, t in enumerate(toks))
    assert sequence_log_prob(m, "2+2=", toks) == acc
    assert acc == pytest.approx(2 * math.log(0.9))


def test_noisy_oracle_error_rate_moves_preferred_token():
    m = NoisyOracleAdditionModel(0.2, error_rate=1.0, rng_seed=1)
    q = "5+5="
    assert all(m.preferred_token(q, answer_sequence(q).tokens[:i]) != answer_sequence(q).tokens[i] for i in range(3))
    with pytest.raises(ValueError):
        NoisyOracleAdditionModel(digit_confusion_rate=1.0)


# --- traces --------------------------------------------------------------------

def test_trace_roundtrip_tabular(tmp_path):
    for i, m in enumerate(random_models(5, seed=8)):
        path = tmp_path / f"t{i}.jsonl"
        record_trace(m, [("x", "x")], m.max_depth, path)
        tm = TraceModel(path)
        assert tm.alphabet.token_names() == m.alphabet.token_names() and tm.condition_ids == ["x"]
        for (cid, prefix), lp in m.entries():
            assert np.array_equal(tm.next_token_log_probs("x", prefix), lp)


def test_trace_missing_key(tmp_path, hand):
    record_trace(hand, {"x": "x"}, 3, tmp_path / "t.jsonl")
    tm = TraceModel(tmp_path / "t.jsonl")
    with pytest.raises(MissingEntryError):
        tm.next_token_log_probs("y", ())
    with pytest.raises(MissingEntryError):
        tm.next_token_log_probs("x", (A, A))


def test_trace_byte_identical(tmp_path):
    m = NoisyOracleAdditionModel(0.2, rng_seed=9)
    conds = [(q, q) for q in ("1+2=", "33+4=")]
    record_trace(m, conds, 3, tmp_path / "a.jsonl")
    record_trace(NoisyOracleAdditionModel(0.2, rng_seed=9), conds, 3, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    tm = TraceModel(tmp_path / "a.jsonl")
    assert np.array_equal(tm.next_token_log_probs("33+4=", (3,)), m.next_token_log_probs("33+4=", (3,)))


def test_trace_rejects_bad_files(tmp_path):
    (tmp_path / "bad.jsonl").write_text('{"nope": 1}\n')
    with pytest.raises(ValueError):
        TraceModel(tmp_path / "bad.jsonl")
    with pytest.raises(ValueError):
        record_trace(greedy_trap(), [("x", "x")], 3, tmp_path / "big.jsonl", max_entries=2)
