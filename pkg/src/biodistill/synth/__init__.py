"""Synthetic paired PPG/accelerometry corpus with exact ground-truth labels."""

from .profiles import ParticipantProfile, sample_population
from .rr import gen_rr_sequence, labels_from_rr
from .waveforms import synth_accel, synth_ppg
from .preprocess import bandpass_filter, preprocess_segment, zscore
from .dataset import (
    DatasetStore,
    SegmentPair,
    build_dataset,
    generate_segment_pair,
    RAW_RATE_HZ,
    TARGET_RATE_HZ,
)

__all__ = [
    "DatasetStore",
    "ParticipantProfile",
    "RAW_RATE_HZ",
    "SegmentPair",
    "TARGET_RATE_HZ",
    "bandpass_filter",
    "build_dataset",
    "gen_rr_sequence",
    "generate_segment_pair",
    "labels_from_rr",
    "preprocess_segment",
    "sample_population",
    "synth_accel",
    "synth_ppg",
    "zscore",
]
