"""Record and replay next-token distributions of arbitrary models.

Trace files are JSONL.  The first line is ``{"vocab": <vocabulary object>}``;
every following line is::

    {"id": str, "step": int, "prefix": [token strings], "logp": [float | null, ...]}

with one ``logp`` entry per vocabulary id (``null`` encodes zero
probability).  ``step`` equals ``len(prefix)``; the prefix disambiguates
the many partial hypotheses that share a step during beam decoding.
"""

from __future__ import annotations

import json

import numpy as np

from confbeam.models.base import NEG_INF, ArsModel, MissingEntryError
from confbeam.seqcore import TokenAlphabet


def _encode_logp(row) -> list:
    return [None if v == NEG_INF else float(v) for v in row]


def record_trace(model: ArsModel, conditions, max_len: int, path, max_entries: int = 10**6) -> int:
    """Write every live prefix of length ``< max_len`` with non-zero probability.

    ``conditions`` is a sequence of ``(condition_id, condition)`` pairs or a
    mapping from ids to conditions.  Returns the number of entries written.
    """
    items = list(conditions.items()) if isinstance(conditions, dict) else list(conditions)
    alphabet = model.alphabet
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps({"vocab": alphabet.to_vocab()}) + "\n")
        for cid, condition in items:
            stack = [()]
            while stack:
                prefix = stack.pop()
                row = model.next_token_log_probs(condition, prefix)
                rec = {"id": str(cid), "step": len(prefix), "prefix": alphabet.decode(prefix),
                       "logp": _encode_logp(row)}
                f.write(json.dumps(rec) + "\n")
                count += 1
                if count > max_entries:
                    raise ValueError(f"trace exceeds max_entries={max_entries}")
                if len(prefix) + 1 < max_len:
                    # reversed so the file lists prefixes in lexicographic order
                    for t in reversed(alphabet.base_tokens):
                        if row[t] != NEG_INF:
                            stack.append(prefix + (t,))
    return count


class TraceModel(ArsModel):
    """Replays a trace file; conditions are the trace's string ids."""

    def __init__(self, path):
        self.path = str(path)
        self._table: dict[tuple[str, tuple[int, ...]], np.ndarray] = {}
        with open(path, encoding="utf-8") as f:
            header = json.loads(f.readline())
            try:
                self.alphabet = TokenAlphabet.from_vocab(header["vocab"])
            except (KeyError, TypeError):
                raise ValueError(f"{path}: first line must hold the vocabulary object") from None
            for lineno, line in enumerate(f, 2):
                if not line.strip():
                    continue
                rec = json.loads(line)
                prefix = self.alphabet.encode(rec["prefix"])
                if rec["step"] != len(prefix):
                    raise ValueError(f"{path}:{lineno}: step {rec['step']} does not match prefix length")
                row = np.array([NEG_INF if v is None else v for v in rec["logp"]], dtype=float)
                if row.shape != (self.alphabet.size,):
                    raise ValueError(f"{path}:{lineno}: expected {self.alphabet.size} log-probabilities")
                self._table[(str(rec["id"]), prefix)] = row

    @property
    def condition_ids(self) -> list[str]:
        return sorted({cid for cid, _ in self._table})

    def _log_probs(self, condition, prefix):
        try:
            return self._table[(str(condition), prefix)].copy()
        except KeyError:
            raise MissingEntryError(
                f"trace {self.path} has no entry for id {condition!r} at step {len(prefix)} (prefix {prefix})"
            ) from None

