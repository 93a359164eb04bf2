"""Calibrate dynamic thresholds on a synthetic task and look at a few prediction sets.

    python demos/dynamic_walkthrough.py
"""

import numpy as np

from confbeam import calibrate_dynamic, conditional_coverage_law, decode_dynamic, guarantee
from confbeam.models import LogitChainModel, LogitChainTask, derive_rng

truth = LogitChainModel.random(seed=0, n_base=3, max_len=4)
task = LogitChainTask(truth)
(cc, ct), (tc, tt) = task.draw_split(derive_rng(0, 0), 500, 5)

pad = truth.alphabet.padding
calib = [(cc[i], tuple(int(t) for t in row if t != pad)) for i, row in enumerate(ct)]
th = calibrate_dynamic(truth, calib, alpha=0.05, max_len=4)

print("per-step thresholds:", [None if t is None else round(t, 3) for t in th.thresholds])
print("removed per step:   ", th.ks)
exact, bound = guarantee(0.05, 4, th)
law = conditional_coverage_law(th.n0, th.ks)
print(f"coverage {exact:.4f} (lower bound {bound:.4f}); conditional law Beta({law.a:g}, {law.b:g})")

names = truth.alphabet.token_names()
for i in range(len(tt)):
    true = tuple(int(t) for t in tt[i] if t != pad)
    sets = decode_dynamic(truth, tc[i], th)
    hit = any(s.sequence.content() == true for s in sets)
    print(f"\nitem {i}: truth {' '.join(names[t] for t in true)}  covered={hit}  size={len(sets)}")
    for s in sets[:4]:
        print(f"   {' '.join(names[t] for t in s.sequence.content()):<16} score {s.normalized_score:7.3f}")
    if len(sets) > 4:
        print(f"   ... {len(sets) - 4} more")
