"""Participant-level physiology parameters.

Each synthetic participant owns a resting heart rate, a heart-rate
variability scale, per-channel sensor gains, and a ballistocardiogram
kernel (per-axis damped-oscillation frequency/decay plus a fixed body
rotation). The binary trait marks participants whose mean HR sits above
the population median, giving a clean participant-level classification
target.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

N_PPG_CHANNELS = 4
N_ACCEL_CHANNELS = 3

# fixed salt keeps the population draw independent of per-segment streams
_POPULATION_TAG = 0xA11CE


@dataclass(frozen=True)
class BcgKernel:
    freq_hz: np.ndarray  # (3,) oscillation frequency per axis
    decay_s: np.ndarray  # (3,) exponential decay constant per axis
    rotation: np.ndarray  # (3,3) per-participant orthonormal mixing

    def __post_init__(self):
        object.__setattr__(self, "freq_hz", np.asarray(self.freq_hz, dtype=np.float64))
        object.__setattr__(self, "decay_s", np.asarray(self.decay_s, dtype=np.float64))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))


@dataclass(frozen=True)
class ParticipantProfile:
    participant_id: int
    mean_hr: float  # beats/min
    hrv_scale: float  # ms, target SDNN of the rr process
    ppg_gains: np.ndarray  # (4,) positive
    accel_gains: np.ndarray  # (3,) positive
    bcg_kernel: BcgKernel
    binary_trait: bool

    def __post_init__(self):
        if not 40.0 <= self.mean_hr <= 120.0:
            raise ValueError(f"mean_hr {self.mean_hr} outside [40, 120]")
        # sampled populations always have strictly positive gains; zero is
        # tolerated here so diagnostics can silence a channel deliberately
        if np.any(np.asarray(self.ppg_gains) < 0) or np.any(
            np.asarray(self.accel_gains) < 0
        ):
            raise ValueError("channel gains must be non-negative")


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    # QR of a gaussian matrix, sign-fixed: uniform over orthogonal matrices
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def sample_population(n_participants: int, seed: int) -> List[ParticipantProfile]:
    """Draw a deterministic population; trait threshold is the cohort median HR."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, _POPULATION_TAG]))
    mean_hrs = np.clip(rng.normal(70.0, 10.0, n_participants), 40.0, 120.0)
    # log-uniform over [10, 120] ms
    hrvs = np.exp(rng.uniform(np.log(10.0), np.log(120.0), n_participants))
    median_hr = float(np.median(mean_hrs))
    profiles = []
    for pid in range(n_participants):
        ppg_gains = np.exp(rng.normal(0.0, 0.2, N_PPG_CHANNELS))
        accel_gains = np.exp(rng.normal(0.0, 0.2, N_ACCEL_CHANNELS))
        kernel = BcgKernel(
            freq_hz=rng.uniform(3.0, 7.0, N_ACCEL_CHANNELS),
            decay_s=rng.uniform(0.08, 0.20, N_ACCEL_CHANNELS),
            rotation=_random_rotation(rng),
        )
        profiles.append(
            ParticipantProfile(
                participant_id=pid,
                mean_hr=float(mean_hrs[pid]),
                hrv_scale=float(hrvs[pid]),
                ppg_gains=ppg_gains,
                accel_gains=accel_gains,
                bcg_kernel=kernel,
                binary_trait=bool(mean_hrs[pid] > median_hr),
            )
        )
    return profiles
