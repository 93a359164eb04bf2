"""Conformal beam subsets and dynamic conformal beam decoding."""

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
    guarantee,
    k_schedule,
    predict_sub_beam,
    region_contains,
)
from confbeam.decoding import beam_search, beam_search_batch, exact_argmax, greedy_decode
from confbeam.seqcore import Sequence, ScoredSequence, TokenAlphabet, normalized_score, truncate

__version__ = "0.1.0"
