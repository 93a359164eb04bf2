"""Sub-beam calibration on the noisy addition oracle.

The oracle answers well-formed sums correctly most of the time, so the
beam usually contains the truth and the calibrated sub-beam is small.

    python demos/fixed_beam_walkthrough.py
"""

from confbeam import calibrate_sub_beam, predict_sub_beam
from confbeam.models import ADDITION_ALPHABET, NoisyOracleAdditionModel, generate_additions_dataset

items = generate_additions_dataset(seed=1, pairs=[(2, 2), (3, 2)], samples_per_pair=300, repeats=1,
                                   include_small=False)
model = NoisyOracleAdditionModel(digit_confusion_rate=0.3, rng_seed=2)
calib = [(q, s.content()) for q, s in items[:400]]
test = items[400:410]

cal = calibrate_sub_beam(model, calib, width=4, max_len=6, alpha=0.1, delta=0.05)
print(f"in-beam items {cal.n_beta}/{cal.n_total}, threshold {cal.threshold:.4f}")
print(f"beam coverage lower bound {cal.beam_cov_lower:.4f}, composite bound {cal.composite_guarantee:.4f}")

for q, s in test:
    sub = predict_sub_beam(model, q, cal)
    answers = ["".join(ADDITION_ALPHABET.decode(x.sequence.content()[:-1])) for x in sub]
    truth = "".join(ADDITION_ALPHABET.decode(s.content()[:-1]))
    print(f"{q:<10} truth {truth:<6} set {answers}")
