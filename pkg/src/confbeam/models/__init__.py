"""Autoregressive model interface, synthetic model zoo, traces and ground-truth tasks."""

from confbeam.models.additions import (
    ADDITION_ALPHABET,
    DEFAULT_PAIRS,
    NoisyOracleAdditionModel,
    answer_sequence,
    generate_additions_dataset,
    parse_question,
    read_dataset,
    write_dataset,
)
from confbeam.models.base import (
    ArsModel,
    EnumerationGuardError,
    MissingEntryError,
    derive_rng,
    enumerate_support,
    sample_sequences,
    sequence_log_prob,
    stable_seed,
)
from confbeam.models.tasks import DatasetTask, GroundTruthTask, LogitChainTask, ModelTask, TabularTask
from confbeam.models.trace import TraceModel, record_trace
from confbeam.models.zoo import LogitChainModel, TabularModel, random_tabular_model

__all__ = [
    "ADDITION_ALPHABET",
    "DEFAULT_PAIRS",
    "ArsModel",
    "DatasetTask",
    "EnumerationGuardError",
    "GroundTruthTask",
    "LogitChainModel",
    "LogitChainTask",
    "MissingEntryError",
    "ModelTask",
    "NoisyOracleAdditionModel",
    "TabularModel",
    "TabularTask",
    "TraceModel",
    "answer_sequence",
    "derive_rng",
    "enumerate_support",
    "generate_additions_dataset",
    "parse_question",
    "random_tabular_model",
    "read_dataset",
    "record_trace",
    "sample_sequences",
    "sequence_log_prob",
    "stable_seed",
    "write_dataset",
]
