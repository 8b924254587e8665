"""Preprocessing chain: zero-phase bandpass, decimate to 64 Hz, z-score.

The band is 0.4-8 Hz (24-480 bpm heart-rate content) through a 4th-order
Butterworth applied forward-backward. Decimation after the bandpass is a
plain stride: everything above the 8 Hz edge is already gone, so no
separate anti-alias stage is needed.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import butter, filtfilt

from ..errors import DataError

BAND_LO_HZ = 0.4
BAND_HI_HZ = 8.0
_FILTER_CACHE: dict = {}


def _band_coeffs(fs: int):
    if fs not in _FILTER_CACHE:
        # N=2 sections -> 4th-order bandpass transfer
        _FILTER_CACHE[fs] = butter(2, [BAND_LO_HZ, BAND_HI_HZ], btype="bandpass", fs=fs)
    return _FILTER_CACHE[fs]


def bandpass_filter(signal: np.ndarray, fs: int) -> np.ndarray:
    """Zero-phase 0.4-8 Hz bandpass along the last axis."""
    b, a = _band_coeffs(fs)
    return filtfilt(b, a, np.asarray(signal, dtype=np.float64), axis=-1)


def zscore(signal: np.ndarray) -> np.ndarray:
    """Per-channel standardization with the population std."""
    x = np.asarray(signal, dtype=np.float64)
    std = x.std(axis=-1, keepdims=True)
    bad = np.nonzero(std.ravel() < 1e-10)[0]
    if bad.size:
        raise DataError(f"zero-variance channel {int(bad[0])} cannot be z-scored")
    return (x - x.mean(axis=-1, keepdims=True)) / std


def preprocess_segment(
    raw: np.ndarray, fs: int, target_fs: int = 64
) -> np.ndarray:
    """(C, N) raw at `fs` -> (C, N * target/fs) float32, filtered and z-scored."""
    if fs % target_fs:
        raise DataError(f"cannot decimate {fs} Hz to {target_fs} Hz by an integer factor")
    filtered = bandpass_filter(raw, fs)
    step = fs // target_fs
    decimated = filtered[..., ::step] if step > 1 else filtered
    return zscore(decimated).astype(np.float32)
