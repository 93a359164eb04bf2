"""Ground-truth tasks: joint samplers over (condition, true sequence) pairs.

A draw returns ``(conditions, tokens)`` where ``tokens`` is an integer
array of shape ``(n, max_len)`` padded after the terminator.  Pairs are
i.i.d., hence exchangeable.
"""

from __future__ import annotations

import numpy as np

from confbeam.models.base import ArsModel, sample_sequences, take
from confbeam.models.zoo import LogitChainModel, TabularModel
from confbeam.seqcore import TokenAlphabet, pad_to


class GroundTruthTask:
    alphabet: TokenAlphabet
    max_len: int

    def draw(self, rng: np.random.Generator, n: int):
        raise NotImplementedError

    def draw_split(self, rng: np.random.Generator, n_calib: int, n_test: int):
        """Independent calibration and test draws."""
        return self.draw(rng, n_calib), self.draw(rng, n_test)


class ModelTask(GroundTruthTask):
    """True sequences are ancestral samples from ``truth``.

    ``condition_sampler(rng, n)`` returns ``n`` conditions.
    """

    def __init__(self, truth: ArsModel, condition_sampler, max_len: int):
        self.truth = truth
        self.alphabet = truth.alphabet
        self.condition_sampler = condition_sampler
        self.max_len = int(max_len)

    def draw(self, rng, n):
        conditions = self.condition_sampler(rng, n)
        return conditions, sample_sequences(self.truth, conditions, rng, self.max_len)


class _Gaussian:
    def __init__(self, dim: int):
        self.dim = dim

    def __call__(self, rng, n):
        return rng.standard_normal((n, self.dim))


class LogitChainTask(ModelTask):
    """Standard-normal conditions, sequences sampled from a :class:`LogitChainModel`."""

    def __init__(self, truth: LogitChainModel):
        super().__init__(truth, _Gaussian(truth.dim), truth.max_len)


class _Categorical:
    def __init__(self, conditions, weights):
        self.conditions = list(conditions)
        w = np.ones(len(self.conditions)) if weights is None else np.asarray(weights, dtype=float)
        self.p = w / w.sum()

    def __call__(self, rng, n):
        return take(self.conditions, rng.choice(len(self.conditions), size=n, p=self.p))


class TabularTask(ModelTask):
    """Conditions drawn from the table's ids (optionally weighted)."""

    def __init__(self, truth: TabularModel, conditions=None, weights=None):
        conditions = truth.conditions if conditions is None else conditions
        super().__init__(truth, _Categorical(conditions, weights), truth.max_depth)


class DatasetTask(GroundTruthTask):
    """Fixed pool of labelled items; splits are drawn without replacement.

    Items whose true sequence is longer than ``max_len`` are dropped up
    front; ``n_dropped`` records how many.
    """

    def __init__(self, alphabet: TokenAlphabet, conditions, sequences, max_len: int, ids=None):
        self.alphabet = alphabet
        self.max_len = int(max_len)
        conditions = list(conditions)
        ids = list(ids) if ids is not None else [str(i) for i in range(len(conditions))]
        contents = [tuple(s.content()) if hasattr(s, "content") else tuple(s) for s in sequences]
        keep = [i for i, c in enumerate(contents) if len(c) <= self.max_len]
        self.n_dropped = len(contents) - len(keep)
        self.conditions = [conditions[i] for i in keep]
        self.ids = [ids[i] for i in keep]
        self.tokens = np.array([pad_to(contents[i], self.max_len, alphabet) for i in keep],
                               dtype=np.int64).reshape(len(keep), self.max_len)

    def __len__(self):
        return len(self.conditions)

    def subset(self, idx):
        return take(self.conditions, idx), self.tokens[np.asarray(idx)]

    def draw(self, rng, n):
        if n > len(self):
            raise ValueError(f"requested {n} items from a pool of {len(self)}")
        return self.subset(rng.choice(len(self), size=n, replace=False))

    def draw_split(self, rng, n_calib, n_test):
        if n_calib + n_test > len(self):
            raise ValueError(f"split of {n_calib}+{n_test} exceeds the pool of {len(self)} items")
        idx = rng.permutation(len(self))
        return self.subset(idx[:n_calib]), self.subset(idx[n_calib:n_calib + n_test])
