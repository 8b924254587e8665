"""Dataset container: JSON manifest + packed f32 records, deterministic by seed.

Every segment derives its own RNG stream from (seed, participant_id,
segment_id), so generation order never matters and rebuilding with the
same seed reproduces the files byte for byte. Records hold, in order:
ppg (4x3840), accel (3x3840), rr count, rr padded to 200 slots, then the
hr/sdnn/rmssd labels — all little-endian float32.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..errors import ConfigError, DataError
from .preprocess import preprocess_segment
from .profiles import ParticipantProfile, sample_population
from .rr import gen_rr_sequence, labels_from_rr
from .waveforms import RAW_RATE_HZ, synth_accel, synth_ppg

TARGET_RATE_HZ = 64
SEGMENT_S = 60
SEGMENT_SAMPLES = TARGET_RATE_HZ * SEGMENT_S  # 3840
RR_SLOTS = 200  # rr >= 0.3 s bounds a 60 s segment to at most 200 beats
PPG_CHANNELS = 4
ACCEL_CHANNELS = 3

_PPG_FLOATS = PPG_CHANNELS * SEGMENT_SAMPLES
_ACCEL_FLOATS = ACCEL_CHANNELS * SEGMENT_SAMPLES
RECORD_FLOATS = _PPG_FLOATS + _ACCEL_FLOATS + 1 + RR_SLOTS + 3

_SPLIT_TAG = 0x5B117
_MAX_REGEN_ATTEMPTS = 5

MANIFEST_NAME = "manifest.json"
RECORDS_NAME = "records.bin"


@dataclass
class SegmentPair:
    ppg: np.ndarray  # (4, 3840) float32, preprocessed
    accel: np.ndarray  # (3, 3840) float32, preprocessed
    rr_intervals: np.ndarray  # float64 seconds
    labels: Dict[str, float]
    participant_id: int
    segment_id: int


def generate_segment_pair(
    profile: ParticipantProfile, seed: int, segment_id: int
) -> SegmentPair:
    """One deterministic paired segment; degenerate draws are regenerated
    with an attempt-salted stream."""
    last_err: Optional[Exception] = None
    for attempt in range(_MAX_REGEN_ATTEMPTS):
        salt = [seed, profile.participant_id, segment_id]
        if attempt:
            salt.append(attempt)
        rng = np.random.default_rng(np.random.SeedSequence(salt))
        rr = gen_rr_sequence(profile, SEGMENT_S, rng)
        raw_ppg = synth_ppg(rr, profile, rng, SEGMENT_S)
        raw_accel = synth_accel(rr, profile, rng, SEGMENT_S)
        try:
            ppg = preprocess_segment(raw_ppg, RAW_RATE_HZ, TARGET_RATE_HZ)
            accel = preprocess_segment(raw_accel, RAW_RATE_HZ, TARGET_RATE_HZ)
        except DataError as e:
            last_err = e
            continue
        return SegmentPair(
            ppg=ppg,
            accel=accel,
            rr_intervals=rr,
            labels=labels_from_rr(rr),
            participant_id=profile.participant_id,
            segment_id=segment_id,
        )
    raise DataError(
        f"segment ({profile.participant_id}, {segment_id}) degenerate after "
        f"{_MAX_REGEN_ATTEMPTS} attempts: {last_err}"
    )


def _pack_record(pair: SegmentPair) -> np.ndarray:
    rr = np.asarray(pair.rr_intervals)
    if rr.size > RR_SLOTS:
        raise DataError(f"rr sequence of {rr.size} beats exceeds {RR_SLOTS} slots")
    rec = np.zeros(RECORD_FLOATS, dtype="<f4")
    rec[:_PPG_FLOATS] = pair.ppg.astype("<f4").ravel()
    rec[_PPG_FLOATS : _PPG_FLOATS + _ACCEL_FLOATS] = pair.accel.astype("<f4").ravel()
    base = _PPG_FLOATS + _ACCEL_FLOATS
    rec[base] = rr.size
    rec[base + 1 : base + 1 + rr.size] = rr.astype("<f4")
    # labels recomputed from the rounded rr so the container is self-consistent
    stored = labels_from_rr(rec[base + 1 : base + 1 + rr.size].astype(np.float64))
    rec[base + 1 + RR_SLOTS : base + 4 + RR_SLOTS] = [
        stored["hr"], stored["sdnn"], stored["rmssd"],
    ]
    return rec


def participant_split(n_participants: int, seed: int) -> tuple:
    """Deterministic 80/20 participant-level split; returns (train, test) ids."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, _SPLIT_TAG]))
    order = rng.permutation(n_participants)
    n_test = max(1, int(round(0.2 * n_participants)))
    test_ids = sorted(int(i) for i in order[:n_test])
    train_ids = sorted(int(i) for i in order[n_test:])
    return train_ids, test_ids


def build_dataset(
    out_dir,
    n_participants: int,
    segments_per_participant: int,
    seed: int,
) -> "DatasetStore":
    """Generate the full corpus and write the container into `out_dir`."""
    if n_participants < 5:
        raise ConfigError("need at least 5 participants for an 80/20 split")
    if segments_per_participant < 4:
        raise ConfigError("every participant needs at least 4 segments")
    profiles = sample_population(n_participants, seed)
    train_ids, test_ids = participant_split(n_participants, seed)

    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    records_path = os.path.join(out_dir, RECORDS_NAME)
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    index: List[List[int]] = []
    try:
        with open(records_path, "wb") as f:
            for profile in profiles:
                for sid in range(segments_per_participant):
                    pair = generate_segment_pair(profile, seed, sid)
                    f.write(_pack_record(pair).tobytes())
                    index.append([profile.participant_id, sid])
    except OSError as e:
        raise DataError(f"cannot write records to {records_path}: {e}") from e

    manifest = {
        "format_version": 1,
        "seed": seed,
        "n_participants": n_participants,
        "segments_per_participant": segments_per_participant,
        "segment_s": SEGMENT_S,
        "raw_rate_hz": RAW_RATE_HZ,
        "target_rate_hz": TARGET_RATE_HZ,
        "rr_slots": RR_SLOTS,
        "record_floats": RECORD_FLOATS,
        "n_records": len(index),
        "train_participants": train_ids,
        "test_participants": test_ids,
        "participants": [
            {
                "id": p.participant_id,
                "mean_hr": p.mean_hr,
                "hrv_scale": p.hrv_scale,
                "binary_trait": p.binary_trait,
            }
            for p in profiles
        ],
        "records": index,
    }
    try:
        with open(manifest_path, "w", encoding="utf-8") as f:
            json.dump(manifest, f, sort_keys=True, separators=(",", ":"))
            f.write("\n")
    except OSError as e:
        raise DataError(f"cannot write manifest to {manifest_path}: {e}") from e
    return DatasetStore(out_dir)


class DatasetStore:
    """Read-side of the container; records are memory-mapped, never loaded whole."""

    def __init__(self, root):
        self.root = os.fspath(root)
        manifest_path = os.path.join(self.root, MANIFEST_NAME)
        records_path = os.path.join(self.root, RECORDS_NAME)
        try:
            with open(manifest_path, "r", encoding="utf-8") as f:
                self.manifest = json.load(f)
        except OSError as e:
            raise DataError(f"cannot read manifest at {manifest_path}: {e}") from e
        except json.JSONDecodeError as e:
            raise DataError(f"corrupt manifest at {manifest_path}: {e}") from e
        if self.manifest.get("format_version") != 1:
            raise DataError(f"unsupported dataset format in {manifest_path}")
        n = self.manifest["n_records"]
        width = self.manifest["record_floats"]
        if width != RECORD_FLOATS:
            raise DataError(
                f"record width {width} does not match this build ({RECORD_FLOATS})"
            )
        expected = n * width * 4
        actual = os.path.getsize(records_path) if os.path.exists(records_path) else -1
        if actual != expected:
            raise DataError(
                f"records file {records_path}: {actual} bytes, expected {expected}"
            )
        self._records = np.memmap(records_path, dtype="<f4", mode="r", shape=(n, width))
        self.record_index = np.asarray(self.manifest["records"], dtype=np.int64)
        self.train_participants = list(self.manifest["train_participants"])
        self.test_participants = list(self.manifest["test_participants"])
        self._by_participant = {
            int(p["id"]): p for p in self.manifest["participants"]
        }

    # -- basic views ---------------------------------------------------

    @property
    def n_records(self) -> int:
        return int(self.manifest["n_records"])

    @property
    def participant_ids(self) -> np.ndarray:
        return self.record_index[:, 0]

    def record_indices_for(self, participant_ids: Sequence[int]) -> np.ndarray:
        wanted = set(int(i) for i in participant_ids)
        mask = np.fromiter(
            (int(p) in wanted for p in self.participant_ids),
            dtype=bool,
            count=self.n_records,
        )
        return np.nonzero(mask)[0]

    def train_record_indices(self) -> np.ndarray:
        return self.record_indices_for(self.train_participants)

    def test_record_indices(self) -> np.ndarray:
        return self.record_indices_for(self.test_participants)

    # -- field accessors ----------------------------------------------

    def ppg(self, indices) -> np.ndarray:
        rows = self._records[np.asarray(indices, dtype=np.int64)]
        return np.array(rows[:, :_PPG_FLOATS]).reshape(-1, PPG_CHANNELS, SEGMENT_SAMPLES)

    def accel(self, indices) -> np.ndarray:
        rows = self._records[np.asarray(indices, dtype=np.int64)]
        block = rows[:, _PPG_FLOATS : _PPG_FLOATS + _ACCEL_FLOATS]
        return np.array(block).reshape(-1, ACCEL_CHANNELS, SEGMENT_SAMPLES)

    def rr(self, index: int) -> np.ndarray:
        row = self._records[int(index)]
        base = _PPG_FLOATS + _ACCEL_FLOATS
        count = int(row[base])
        return np.array(row[base + 1 : base + 1 + count], dtype=np.float64)

    def labels(self, indices) -> Dict[str, np.ndarray]:
        rows = self._records[np.asarray(indices, dtype=np.int64)]
        base = _PPG_FLOATS + _ACCEL_FLOATS + 1 + RR_SLOTS
        block = np.array(rows[:, base : base + 3], dtype=np.float64)
        return {"hr": block[:, 0], "sdnn": block[:, 1], "rmssd": block[:, 2]}

    def trait_of(self, participant_id: int) -> bool:
        return bool(self._by_participant[int(participant_id)]["binary_trait"])

    def traits(self, indices) -> np.ndarray:
        pids = self.record_index[np.asarray(indices, dtype=np.int64), 0]
        return np.fromiter(
            (self.trait_of(p) for p in pids), dtype=bool, count=len(pids)
        )

    def segment_pair(self, index: int) -> SegmentPair:
        idx = int(index)
        rr = self.rr(idx)
        labels = self.labels([idx])
        pid, sid = (int(v) for v in self.record_index[idx])
        return SegmentPair(
            ppg=self.ppg([idx])[0],
            accel=self.accel([idx])[0],
            rr_intervals=rr,
            labels={k: float(v[0]) for k, v in labels.items()},
            participant_id=pid,
            segment_id=sid,
        )
