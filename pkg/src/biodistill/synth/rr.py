"""Latent beat-interval process and the exact label formulas."""

from __future__ import annotations

from typing import Dict

import numpy as np

from ..errors import DataError
from .profiles import ParticipantProfile

RR_MIN_S = 0.3
RR_MAX_S = 2.0

_AR_PHI = 0.8  # lag-1 autocorrelation of the rr process
# per-segment jitter of the mean interval, as a multiple of hrv_scale;
# gives within-participant HR spread while hrv->0 still collapses to constant rr
_MEAN_JITTER_FACTOR = 1.5


def gen_rr_sequence(
    profile: ParticipantProfile, duration_s: float, rng: np.random.Generator
) -> np.ndarray:
    """AR(1) beat intervals whose cumulative sum covers `duration_s`.

    The stationary standard deviation is hrv_scale (given in ms); draws
    landing outside [0.3, 2.0] s are resampled. The segment's mean interval
    gets one participant-scaled jitter draw so different segments of the
    same participant sit at slightly different heart rates.

    Parameters
    ----------
    profile : ParticipantProfile
    duration_s : float
        Positive segment length in seconds.
    rng : np.random.Generator
        Segment-owned stream; identical streams give identical sequences.

    Returns
    -------
    np.ndarray of float64 intervals in seconds.
    """
    if duration_s <= 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    base_rr = 60.0 / profile.mean_hr
    sigma = profile.hrv_scale / 1000.0
    jitter = rng.normal(0.0, _MEAN_JITTER_FACTOR * sigma)
    mean_rr = float(np.clip(base_rr + jitter, RR_MIN_S + 0.05, RR_MAX_S - 0.1))
    innov_std = sigma * np.sqrt(1.0 - _AR_PHI**2)

    intervals = []
    deviation = rng.normal(0.0, sigma) if sigma > 0 else 0.0
    total = 0.0
    while total < duration_s:
        rr = mean_rr + deviation
        if not RR_MIN_S <= rr <= RR_MAX_S:
            # resample the deviation; fall back to the clipped value if the
            # process mean sits hopelessly close to a bound
            for _ in range(100):
                deviation = rng.normal(0.0, sigma) if sigma > 0 else 0.0
                rr = mean_rr + deviation
                if RR_MIN_S <= rr <= RR_MAX_S:
                    break
            else:
                rr = float(np.clip(rr, RR_MIN_S, RR_MAX_S))
                deviation = rr - mean_rr
        intervals.append(rr)
        total += rr
        step = rng.normal(0.0, innov_std) if sigma > 0 else 0.0
        deviation = _AR_PHI * deviation + step
    return np.asarray(intervals, dtype=np.float64)


def labels_from_rr(rr_intervals: np.ndarray) -> Dict[str, float]:
    """hr = 60/mean(rr); sdnn = 1000*std(rr); rmssd = 1000*sqrt(mean(diff^2)).

    std is the population standard deviation, matching the z-scoring
    convention used everywhere else in the package.
    """
    rr = np.asarray(rr_intervals, dtype=np.float64)
    if rr.ndim != 1 or rr.size < 2:
        raise DataError(f"labels need at least 2 rr intervals, got {rr.size}")
    diffs = np.diff(rr)
    return {
        "hr": 60.0 / float(rr.mean()),
        "sdnn": 1000.0 * float(rr.std()),
        "rmssd": 1000.0 * float(np.sqrt(np.mean(diffs * diffs))),
    }
