import math
import sys

import numpy as np
import pytest

from confbeam.models import TabularModel, random_tabular_model
from confbeam.seqcore import TokenAlphabet

A, B = 0, 1


@pytest.fixture
def ab():
    # a=0, b=1, terminator=2, padding=3
    return TokenAlphabet.from_size(2)


def hand_table(ab):
    """pi(a)=0.6, pi(w|a)=0.9, pi(b|a)=0.1, pi(b)=0.4, pi(w|b)=1, pi(w|ab)=1."""
    w = ab.terminator
    row = lambda **kw: [kw.get("a", 0.0), kw.get("b", 0.0), kw.get("w", 0.0), 0.0]
    return {
        ("x", ()): row(a=0.6, b=0.4),
        ("x", (A,)): row(b=0.1, w=0.9),
        ("x", (B,)): row(w=1.0),
        ("x", (A, B)): row(w=1.0),
    }


@pytest.fixture
def hand(ab):
    return TabularModel(ab, hand_table(ab), max_depth=3)


def greedy_trap():
    """First token a has mass 0.55 spread over seven continuations; b leads to [b, w] with 0.45."""
    alph = TokenAlphabet.from_size(6)
    w, V = alph.terminator, alph.size
    table = {}
    first = np.zeros(V)
    first[0], first[1] = 0.55, 0.45
    table[("x", ())] = first
    after_a = np.zeros(V)
    after_a[list(alph.extended)] = 1.0 / 7
    table[("x", (0,))] = after_a
    for t in alph.base_tokens:
        end = np.zeros(V)
        end[w] = 1.0
        table[("x", (0, t))] = end
    end = np.zeros(V)
    end[w] = 1.0
    table[("x", (1,))] = end
    return TabularModel(alph, table, max_depth=3)


def random_models(n, seed=0, n_base=(1, 3), depth=(1, 4), **kw):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        nb = int(rng.integers(n_base[0], n_base[1] + 1))
        d = int(rng.integers(depth[0], depth[1] + 1))
        out.append(random_tabular_model(rng, nb, d, **kw))
    return out


LOG54 = math.log(0.54)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
