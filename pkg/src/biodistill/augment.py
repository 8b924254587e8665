"""Stochastic augmentation cascade for contrastive views and distillation inputs.

Every augmentation is a pure function of (input, rng stream): identical
streams give identical outputs, and nothing mutates its input. The cascade
applies each augmentation independently with its configured probability, in
the fixed order cut_out, magnitude_warp, gaussian_noise, channel_permute,
time_warp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

from .errors import ConfigError


@dataclass(frozen=True)
class AugmentConfig:
    """Apply probabilities and strength constants for the cascade."""

    p_cut_out: float = 0.4
    p_magnitude_warp: float = 0.25
    p_gaussian_noise: float = 0.25
    p_channel_permute: float = 0.25
    p_time_warp: float = 0.15
    cut_frac: tuple = (0.05, 0.20)  # contiguous zeroed window, fraction of T
    mag_knots: int = 4
    mag_std: float = 0.2
    mag_floor: float = 0.1  # keeps the gain curve positive
    noise_std: float = 0.15  # relative: inputs are z-scored
    warp_knots: int = 4
    warp_std_frac: float = 0.04  # knot displacement std, fraction of T
    enabled: bool = True

    def __post_init__(self):
        probs = {
            "p_cut_out": self.p_cut_out,
            "p_magnitude_warp": self.p_magnitude_warp,
            "p_gaussian_noise": self.p_gaussian_noise,
            "p_channel_permute": self.p_channel_permute,
            "p_time_warp": self.p_time_warp,
        }
        for name, p in probs.items():
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {p}")
        lo, hi = self.cut_frac
        if not 0.0 <= lo <= hi < 1.0:
            raise ConfigError(f"cut_frac {self.cut_frac} must satisfy 0 <= lo <= hi < 1")
        if self.mag_knots < 2 or self.warp_knots < 1:
            raise ConfigError("knot counts too small to define a curve")
        if self.mag_std < 0 or self.noise_std < 0 or self.warp_std_frac < 0:
            raise ConfigError("strength parameters must be non-negative")


def _check_signal(signal: np.ndarray) -> np.ndarray:
    x = np.asarray(signal)
    if x.ndim != 2:
        raise ValueError(f"expected a (channels, samples) array, got shape {x.shape}")
    return x


def cut_out(signal: np.ndarray, rng: np.random.Generator, frac=(0.05, 0.20)) -> np.ndarray:
    """Zero one contiguous window on all channels.

    Window length is drawn uniformly from [frac[0], frac[1]] of the sample
    count, the start uniformly over valid positions. Samples outside the
    window are bit-identical to the input.
    """
    x = _check_signal(signal)
    t = x.shape[1]
    lo = int(round(frac[0] * t))
    hi = int(round(frac[1] * t))
    length = int(rng.integers(lo, hi + 1))
    start = int(rng.integers(0, t - length + 1))
    out = x.copy()
    out[:, start : start + length] = 0
    return out


def magnitude_warp(
    signal: np.ndarray,
    rng: np.random.Generator,
    knots: int = 4,
    std: float = 0.2,
    floor: float = 0.1,
) -> np.ndarray:
    """Multiply all channels by one smooth positive gain curve.

    The curve is a cubic through `knots` equally spaced values drawn
    N(1, std^2), shared across channels and clipped to >= floor so it can
    never flip a sample's sign.
    """
    x = _check_signal(signal)
    t = x.shape[1]
    values = rng.normal(1.0, std, knots)
    if t < knots:
        return x.copy()
    positions = np.linspace(0.0, t - 1.0, knots)
    curve = CubicSpline(positions, values)(np.arange(t))
    curve = np.maximum(curve, floor)
    return (x * curve).astype(x.dtype, copy=False)


def gaussian_noise(signal: np.ndarray, rng: np.random.Generator, std: float = 0.15) -> np.ndarray:
    x = _check_signal(signal)
    noise = rng.normal(0.0, std, x.shape)
    return (x + noise).astype(x.dtype, copy=False)


def channel_permute(signal: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Reorder channel rows by a uniformly random permutation."""
    x = _check_signal(signal)
    return x[rng.permutation(x.shape[0])].copy()


def _warp_map(t: int, rng: np.random.Generator, knots: int, std_frac: float) -> np.ndarray:
    """Strictly increasing map of [0, t-1] onto itself.

    `knots` interior knots are displaced N(0, (std_frac*t)^2), clipped to
    3 sigma; the endpoints stay pinned. A draw whose knot sequence fails to
    increase is redrawn (rare: clipped displacements almost never overlap),
    and after 50 tries the displacements are halved until the sequence
    increases, which always terminates. Monotone cubic interpolation through
    monotone knots keeps the full map strictly increasing.
    """
    xs = np.linspace(0.0, t - 1.0, knots + 2)
    sigma = std_frac * t
    for _ in range(50):
        disp = np.clip(rng.normal(0.0, sigma, knots), -3 * sigma, 3 * sigma)
        ys = xs.copy()
        ys[1:-1] += disp
        if np.all(np.diff(ys) > 0):
            break
    else:
        while not np.all(np.diff(ys) > 0):
            disp *= 0.5
            ys = xs.copy()
            ys[1:-1] += disp
    return PchipInterpolator(xs, ys)(np.arange(t))


def time_warp(
    signal: np.ndarray,
    rng: np.random.Generator,
    knots: int = 4,
    std_frac: float = 0.04,
) -> np.ndarray:
    """Resample each channel along a smooth strictly increasing time warp.

    Sample i of the output is the input linearly interpolated at warped
    position w(i); w pins both endpoints, so output endpoints equal input
    endpoints.
    """
    x = _check_signal(signal)
    t = x.shape[1]
    if t < knots + 2:
        return x.copy()
    warped = _warp_map(t, rng, knots, std_frac)
    grid = np.arange(t, dtype=np.float64)
    out = np.empty_like(x)
    for ch in range(x.shape[0]):
        out[ch] = np.interp(warped, grid, x[ch].astype(np.float64))
    return out


def apply_cascade(
    signal: np.ndarray, config: AugmentConfig, rng: np.random.Generator
) -> np.ndarray:
    """Run the full cascade; returns an array of the input's shape and dtype.

    With enabled=False the input is returned untouched and the rng stream is
    not consumed. Otherwise one gate uniform is drawn per augmentation, in
    cascade order, and an augmentation's internal draws happen only when its
    gate opens.
    """
    x = _check_signal(signal)
    if not config.enabled:
        return x
    if rng.uniform() < config.p_cut_out:
        x = cut_out(x, rng, config.cut_frac)
    if rng.uniform() < config.p_magnitude_warp:
        x = magnitude_warp(x, rng, config.mag_knots, config.mag_std, config.mag_floor)
    if rng.uniform() < config.p_gaussian_noise:
        x = gaussian_noise(x, rng, config.noise_std)
    if rng.uniform() < config.p_channel_permute:
        x = channel_permute(x, rng)
    if rng.uniform() < config.p_time_warp:
        x = time_warp(x, rng, config.warp_knots, config.warp_std_frac)
    return x
