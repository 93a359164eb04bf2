"""Integer-additions task: dataset generation and a noisy oracle model."""

from __future__ import annotations

import json
import re

import numpy as np

from confbeam.models.base import ArsModel, stable_seed
from confbeam.seqcore import Sequence, TokenAlphabet

ADDITION_ALPHABET = TokenAlphabet.from_vocab(
    {"base": [str(d) for d in range(10)], "terminator": "</s>", "padding": "<pad>"}
)

DEFAULT_PAIRS: tuple[tuple[int, int], ...] = (
    (3, 3), (2, 4), (3, 4), (4, 4), (2, 5), (3, 5),
    (4, 5), (5, 5), (2, 8), (4, 6), (3, 7),
)

_QUESTION = re.compile(r"^(\d+)\+(\d+)=$")


def parse_question(question: str) -> tuple[int, int]:
    m = _QUESTION.match(question)
    if m is None:
        raise ValueError(f"not an addition question: {question!r}")
    return int(m.group(1)), int(m.group(2))


def answer_tokens(total: int) -> tuple[int, ...]:
    """Digits of ``total`` followed by the terminator."""
    return tuple(int(c) for c in str(total)) + (ADDITION_ALPHABET.terminator,)


def answer_sequence(question: str) -> Sequence:
    x, y = parse_question(question)
    return ADDITION_ALPHABET.sequence(answer_tokens(x + y), condition_id=question)


def generate_additions_dataset(seed: int, pairs=DEFAULT_PAIRS, samples_per_pair: int = 5000,
                               repeats: int = 10, include_small: bool = True) -> list[tuple[str, Sequence]]:
    """Addition problems with their answers.

    All pairs of one- and two-digit operands (``0..99``) are emitted first.
    Then, for each digit-count pair ``(m, n)``: draw ``samples_per_pair``
    numbers with ``m`` digits and as many with ``n`` digits, and
    ``repeats`` times permute both pools, pick a random left/right order
    for each index and emit the resulting problems.
    """
    for m, n in pairs:
        if m < 1 or n < 1:
            raise ValueError(f"digit counts must be >= 1, got {(m, n)}")
    if samples_per_pair < 1 or repeats < 1:
        raise ValueError("samples_per_pair and repeats must be >= 1")
    rng = np.random.default_rng(seed)
    problems: list[tuple[int, int]] = []
    if include_small:
        problems.extend((x, y) for x in range(100) for y in range(100))
    N = samples_per_pair
    for m, n in pairs:
        xm = rng.integers(10 ** (m - 1), 10 ** m, size=N)
        xn = rng.integers(10 ** (n - 1), 10 ** n, size=N)
        for _ in range(repeats):
            am = xm[rng.permutation(N)]
            an = xn[rng.permutation(N)]
            swap = rng.integers(0, 2, size=N).astype(bool)
            left = np.where(swap, an, am)
            right = np.where(swap, am, an)
            problems.extend(zip(left.tolist(), right.tolist()))
    out = []
    for x, y in problems:
        q = f"{x}+{y}="
        out.append((q, ADDITION_ALPHABET.sequence(answer_tokens(x + y), condition_id=q)))
    return out


def write_dataset(items, path, alphabet: TokenAlphabet = ADDITION_ALPHABET, id_prefix: str = "add") -> None:
    """One JSON object per line: ``{"id", "question", "answer": [token strings]}``."""
    width = max(6, len(str(len(items))))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for i, (question, seq) in enumerate(items):
            rec = {"id": f"{id_prefix}-{i:0{width}d}", "question": question,
                   "answer": alphabet.decode(seq.content())}
            f.write(json.dumps(rec) + "\n")


def read_dataset(path, alphabet: TokenAlphabet = ADDITION_ALPHABET) -> list[tuple[str, str, Sequence]]:
    """Inverse of :func:`write_dataset`: list of ``(id, question, answer)``."""
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append((str(rec["id"]), rec["question"],
                            alphabet.sequence(alphabet.encode(rec["answer"]), condition_id=rec["question"])))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed dataset record ({exc})") from None
    return out


class NoisyOracleAdditionModel(ArsModel):
    """Stand-in for a fine-tuned adder with a tunable accuracy.

    Conditioned on a question ``"x+y="``, each step puts mass ``1 - d`` on
    the model's preferred next token and spreads ``d`` over the other ten
    tokens with weights ``softmax(g / noise_temperature)``, where ``g`` is
    standard-normal noise hashed from ``(rng_seed, question, prefix)``.

    The preferred token is the next answer digit (or the terminator once
    the answer is complete).  With ``error_rate > 0`` a hashed fraction of
    positions prefers a wrong token instead, which is how beam coverage is
    pushed below one.  ``confusion_jitter`` scales ``d`` per step by
    ``1 - jitter * u`` with hashed ``u ~ U(0, 1)`` to spread the scores.

    Whenever ``d < 0.5`` and ``error_rate == 0`` the true answer has mass
    above one half at every step, so greedy decoding recovers it for any
    noise temperature.
    """

    def __init__(self, digit_confusion_rate: float = 0.1, noise_temperature: float = 1.0, rng_seed: int = 0,
                 error_rate: float = 0.0, confusion_jitter: float = 0.0):
        if not 0.0 <= digit_confusion_rate < 1.0:
            raise ValueError("digit_confusion_rate must lie in [0, 1)")
        if noise_temperature <= 0:
            raise ValueError("noise_temperature must be positive")
        if not 0.0 <= error_rate <= 1.0 or not 0.0 <= confusion_jitter <= 1.0:
            raise ValueError("error_rate and confusion_jitter must lie in [0, 1]")
        self.alphabet = ADDITION_ALPHABET
        self.digit_confusion_rate = float(digit_confusion_rate)
        self.noise_temperature = float(noise_temperature)
        self.rng_seed = int(rng_seed)
        self.error_rate = float(error_rate)
        self.confusion_jitter = float(confusion_jitter)
        self._answers: dict[str, tuple[int, ...]] = {}

    def _answer(self, question: str) -> tuple[int, ...]:
        ans = self._answers.get(question)
        if ans is None:
            x, y = parse_question(question)
            ans = self._answers[question] = answer_tokens(x + y)
        return ans

    def preferred_token(self, question: str, prefix: tuple[int, ...]) -> int:
        ans = self._answer(question)
        pos = len(prefix)
        target = ans[pos] if pos < len(ans) else self.alphabet.terminator
        if self.error_rate > 0:
            rng = np.random.default_rng(stable_seed("err", self.rng_seed, question, pos))
            if rng.random() < self.error_rate:
                wrong = [t for t in self.alphabet.extended if t != target]
                target = wrong[int(rng.integers(len(wrong)))]
        return target

    def _log_probs(self, condition, prefix):
        question = str(condition)
        target = self.preferred_token(question, prefix)
        rng = np.random.default_rng(stable_seed("noise", self.rng_seed, question, prefix))
        g = rng.standard_normal(len(self.alphabet.extended))
        d = self.digit_confusion_rate
        if self.confusion_jitter > 0:
            d *= 1.0 - self.confusion_jitter * rng.random()
        ext = np.array(self.alphabet.extended)
        others = ext != target
        w = np.exp((g[others] - g[others].max()) / self.noise_temperature)
        p = np.zeros(self.alphabet.size)
        p[target] = 1.0 - d
        p[ext[others]] = d * w / w.sum()
        with np.errstate(divide="ignore"):
            return np.log(p)
