"""Raw waveform synthesis at 256 Hz from a shared beat sequence.

PPG: per beat, a systolic Gaussian bump plus a smaller delayed dicrotic
bump, scaled per channel and shifted by a fixed per-channel delay, over a
slow baseline drift with additive Gaussian noise. Accelerometry: per beat,
per-axis damped oscillations mixed through the participant's rotation,
with much heavier noise and occasional motion-artifact bursts. Both
modalities are driven by the same rr sequence — the cross-modal
information the distillation stage depends on.
"""

from __future__ import annotations

import numpy as np

from .profiles import ParticipantProfile

RAW_RATE_HZ = 256

# fixed optical-path delays per PPG channel, seconds
PPG_CHANNEL_DELAYS_S = np.array([0.0, 0.010, 0.020, 0.030])

SYSTOLIC_FRAC = 0.18  # bump center as a fraction of the beat interval
SYSTOLIC_WIDTH_FRAC = 0.055
DICROTIC_FRAC = 0.45
DICROTIC_WIDTH_FRAC = 0.080
DICROTIC_AMP = 0.35

PPG_NOISE_REL = 0.05
ACCEL_NOISE_REL = 0.30
NOISE_FLOOR = 1e-3
ARTIFACT_PROB = 0.1


def _beat_onsets(rr_intervals: np.ndarray) -> np.ndarray:
    rr = np.asarray(rr_intervals, dtype=np.float64)
    return np.concatenate([[0.0], np.cumsum(rr)[:-1]])


def _add_gaussian_bump(out: np.ndarray, fs: int, center_s: float, width_s: float, amp: float) -> None:
    # evaluate only within +-4 widths of the center
    lo = max(0, int((center_s - 4 * width_s) * fs))
    hi = min(out.size, int((center_s + 4 * width_s) * fs) + 1)
    if lo >= hi:
        return
    t = np.arange(lo, hi, dtype=np.float64) / fs
    out[lo:hi] += amp * np.exp(-0.5 * ((t - center_s) / width_s) ** 2)


def _add_damped_osc(out: np.ndarray, fs: int, onset_s: float, freq_hz: float, decay_s: float, amp: float) -> None:
    lo = max(0, int(onset_s * fs))
    hi = min(out.size, int((onset_s + 5 * decay_s) * fs) + 1)
    if lo >= hi:
        return
    t = np.arange(lo, hi, dtype=np.float64) / fs - onset_s
    out[lo:hi] += amp * np.exp(-t / decay_s) * np.sin(2 * np.pi * freq_hz * t)


def ppg_clean(rr_intervals: np.ndarray, profile: ParticipantProfile, duration_s: float = 60.0) -> np.ndarray:
    """Noise-free, drift-free pulse trains for all 4 channels."""
    n = int(round(duration_s * RAW_RATE_HZ))
    onsets = _beat_onsets(rr_intervals)
    rr = np.asarray(rr_intervals, dtype=np.float64)
    out = np.zeros((len(PPG_CHANNEL_DELAYS_S), n))
    for ch, delay in enumerate(PPG_CHANNEL_DELAYS_S):
        gain = float(profile.ppg_gains[ch])
        for onset, beat_rr in zip(onsets, rr):
            start = onset + delay
            _add_gaussian_bump(
                out[ch], RAW_RATE_HZ,
                start + SYSTOLIC_FRAC * beat_rr, SYSTOLIC_WIDTH_FRAC * beat_rr, gain,
            )
            _add_gaussian_bump(
                out[ch], RAW_RATE_HZ,
                start + DICROTIC_FRAC * beat_rr, DICROTIC_WIDTH_FRAC * beat_rr, gain * DICROTIC_AMP,
            )
    return out


def synth_ppg(
    rr_intervals: np.ndarray,
    profile: ParticipantProfile,
    rng: np.random.Generator,
    duration_s: float = 60.0,
    noise: bool = True,
) -> np.ndarray:
    """4-channel raw PPG at 256 Hz; `noise=False` gives clean pulses + drift only."""
    clean = ppg_clean(rr_intervals, profile, duration_s)
    n = clean.shape[1]
    t = np.arange(n, dtype=np.float64) / RAW_RATE_HZ
    out = clean.copy()
    for ch in range(out.shape[0]):
        # slow baseline drift: two sub-passband sinusoids with random phase
        a1, a2 = rng.uniform(0.2, 0.6, 2)
        p1, p2 = rng.uniform(0.0, 2 * np.pi, 2)
        out[ch] += a1 * np.sin(2 * np.pi * 0.07 * t + p1)
        out[ch] += a2 * np.sin(2 * np.pi * 0.13 * t + p2)
        sigma = PPG_NOISE_REL * float(clean[ch].std()) + NOISE_FLOOR
        noise_draw = rng.normal(0.0, sigma, n)  # drawn even when disabled: keeps streams aligned
        if noise:
            out[ch] += noise_draw
    return out


def accel_clean(rr_intervals: np.ndarray, profile: ParticipantProfile, duration_s: float = 60.0) -> np.ndarray:
    """Noise-free ballistocardiogram response on 3 axes."""
    n = int(round(duration_s * RAW_RATE_HZ))
    onsets = _beat_onsets(rr_intervals)
    kernel = profile.bcg_kernel
    axes = np.zeros((3, n))
    for ax in range(3):
        for onset in onsets:
            _add_damped_osc(
                axes[ax], RAW_RATE_HZ, onset,
                float(kernel.freq_hz[ax]), float(kernel.decay_s[ax]), 1.0,
            )
    mixed = kernel.rotation @ axes
    return mixed * np.asarray(profile.accel_gains, dtype=np.float64)[:, None]


def synth_accel(
    rr_intervals: np.ndarray,
    profile: ParticipantProfile,
    rng: np.random.Generator,
    duration_s: float = 60.0,
    noise: bool = True,
) -> np.ndarray:
    """3-axis raw accelerometry at 256 Hz, much noisier than the PPG."""
    clean = accel_clean(rr_intervals, profile, duration_s)
    n = clean.shape[1]
    out = clean.copy()
    for ch in range(3):
        sigma = ACCEL_NOISE_REL * float(clean[ch].std()) + NOISE_FLOOR
        noise_draw = rng.normal(0.0, sigma, n)
        if noise:
            out[ch] += noise_draw
    # occasional wide-band motion burst hitting all axes at once
    if rng.uniform() < ARTIFACT_PROB:
        burst_len = rng.uniform(1.0, 3.0)
        start = rng.uniform(0.0, max(duration_s - burst_len, 0.0))
        lo, hi = int(start * RAW_RATE_HZ), int((start + burst_len) * RAW_RATE_HZ)
        window = np.hanning(hi - lo)
        scale = 3.0 * max(float(clean.std()), NOISE_FLOOR)
        burst = rng.normal(0.0, scale, (3, hi - lo)) * window
        if noise:
            out[:, lo:hi] += burst
    return out
