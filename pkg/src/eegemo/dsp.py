"""Windowed band-power features.

Per analysis window: Hann taper, radix-2 FFT, one-sided power normalised by
1/N^2, then summed over the five EEG bands. Band membership is half-open
``low <= f < high`` except for the last band, which also takes its upper edge.
"""

from __future__ import annotations

import enum
import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data_model import N_LABEL_DIMS, FeatureDataset, TrialSet, rating_to_class
from .errors import InvalidArg, ShapeError, TooFewSamples

STD_FLOOR = 1e-8
LOG_POWER_EPS = 1e-12
DEFAULT_SAMPLE_RATE = 128.0


@dataclass(frozen=True)
class Band:
    name: str
    low_hz: float
    high_hz: float


DEFAULT_BANDS = (
    Band("theta", 4.0, 8.0),
    Band("alpha", 8.0, 12.0),
    Band("low_beta", 12.0, 16.0),
    Band("high_beta", 16.0, 30.0),
    Band("gamma", 30.0, 45.0),
)

# Emotiv Epoc montage in DEAP (Geneva) channel order:
# AF3, F7, F3, FC5, T7, P7, O1, O2, P8, T8, FC6, F4, F8, AF4
DEFAULT_CHANNELS = (1, 3, 2, 4, 7, 11, 13, 31, 29, 25, 21, 19, 20, 17)


def check_bands(bands) -> tuple[Band, ...]:
    bands = tuple(bands)
    if not bands:
        raise InvalidArg("band table is empty")
    for b in bands:
        if not 0 < b.low_hz < b.high_hz:
            raise InvalidArg(f"band {b.name}: need 0 < low < high, got {b.low_hz}..{b.high_hz}")
    for a, b in zip(bands, bands[1:]):
        if b.low_hz < a.high_hz:
            raise InvalidArg(f"bands {a.name} and {b.name} overlap or are out of order")
    return bands


def check_channels(channels, n_channels: int | None = None) -> tuple[int, ...]:
    channels = tuple(int(c) for c in channels)
    if not channels:
        raise InvalidArg("channel subset is empty")
    if len(set(channels)) != len(channels):
        raise InvalidArg(f"duplicate channel index in {channels}")
    if min(channels) < 0:
        raise InvalidArg("channel indices must be >= 0")
    if n_channels is not None and max(channels) >= n_channels:
        raise InvalidArg(f"channel index {max(channels)} out of range for {n_channels} channels")
    return channels


@dataclass(frozen=True)
class WindowPlan:
    window_len: int = 256
    hop: int = 16
    window_fn: str = "hann"
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        n = self.window_len
        if n < 2 or n & (n - 1):
            raise InvalidArg(f"window_len must be a power of two >= 2, got {n}")
        if not 0 < self.hop <= n:
            raise InvalidArg(f"hop must lie in (0, window_len], got {self.hop}")
        if self.window_fn not in ("hann", "rect"):
            raise InvalidArg(f"unknown window function {self.window_fn!r}")

    def window(self) -> np.ndarray:
        if self.window_fn == "hann":
            return hann_window(self.window_len)
        return np.ones(self.window_len)

    def n_windows(self, n_samples: int) -> int:
        if n_samples < self.window_len:
            return 0
        return (n_samples - self.window_len) // self.hop + 1


def hann_window(n: int) -> np.ndarray:
    """Symmetric Hann window, ``0.5 * (1 - cos(2 pi i / (n - 1)))``."""
    if n < 2:
        raise InvalidArg(f"hann window needs n >= 2, got {n}")
    i = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * i / (n - 1)))


@functools.lru_cache(maxsize=None)
def _fft_tables(n: int):
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.int64)
    for i in range(n):
        rev[i] = int(format(i, f"0{bits}b")[::-1], 2) if bits else 0
    k = np.arange(n // 2)
    twiddle = np.cos(2 * np.pi * k / n) - 1j * np.sin(2 * np.pi * k / n)
    rev.flags.writeable = False
    twiddle.flags.writeable = False
    return rev, twiddle


def fft(x) -> np.ndarray:
    """Iterative radix-2 decimation-in-time DFT over the last axis.

    Leading axes are batch axes. Length must be a power of two.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise InvalidArg(f"FFT length must be a power of two, got {n}")
    rev, twiddle = _fft_tables(n)
    a = x[..., rev].astype(np.complex128)
    lead = a.shape[:-1]
    size = 2
    while size <= n:
        half = size // 2
        w = twiddle[:: n // size]
        a = a.reshape(*lead, n // size, size)
        even = a[..., :half]
        odd = a[..., half:] * w
        a = np.concatenate([even + odd, even - odd], axis=-1)
        size *= 2
    return a.reshape(*lead, n)


def one_sided_power(frames, window) -> np.ndarray:
    """One-sided power of windowed frames (last axis), length N/2 + 1."""
    frames = np.asarray(frames, dtype=np.float64)
    n = frames.shape[-1]
    spec = fft(frames * window)[..., : n // 2 + 1]
    p = (spec.real ** 2 + spec.imag ** 2) / float(n * n)
    p[..., 1 : n // 2] *= 2.0
    return p


@dataclass(frozen=True)
class Spectrum:
    power: np.ndarray
    bin_hz: float


def rfft_power(frame, window, sample_rate_hz: float = DEFAULT_SAMPLE_RATE) -> Spectrum:
    frame = np.asarray(frame, dtype=np.float64)
    window = np.asarray(window, dtype=np.float64)
    if frame.ndim != 1 or frame.shape != window.shape:
        raise InvalidArg(f"frame {frame.shape} and window {window.shape} must be equal 1-D")
    n = frame.shape[0]
    if n < 2 or n & (n - 1):
        raise InvalidArg(f"frame length must be a power of two, got {n}")
    return Spectrum(one_sided_power(frame, window), sample_rate_hz / n)


def band_bins(bands, n_fft: int, sample_rate_hz: float) -> list[np.ndarray]:
    """Bin indices per band; last band includes its upper edge."""
    bands = check_bands(bands)
    nyquist = sample_rate_hz / 2
    freqs = np.arange(n_fft // 2 + 1) * (sample_rate_hz / n_fft)
    out = []
    for j, b in enumerate(bands):
        if b.high_hz > nyquist:
            raise InvalidArg(f"band {b.name} ({b.high_hz} Hz) exceeds Nyquist {nyquist} Hz")
        upper = freqs <= b.high_hz if j == len(bands) - 1 else freqs < b.high_hz
        out.append(np.flatnonzero((freqs >= b.low_hz) & upper))
    return out


def band_power(s: Spectrum, low_hz: float, high_hz: float, closed_upper: bool = False) -> float:
    nyquist = s.bin_hz * (len(s.power) - 1)
    if not 0 <= low_hz < high_hz <= nyquist:
        raise InvalidArg(f"band {low_hz}..{high_hz} Hz outside [0, {nyquist}]")
    total = 0.0
    for k, p in enumerate(s.power):
        f = k * s.bin_hz
        if f >= low_hz and (f < high_hz or (closed_upper and f == high_hz)):
            total += p
    return total


def _sum_bins(power: np.ndarray, bins: np.ndarray) -> np.ndarray:
    # fixed ascending accumulation so results never depend on batch layout
    acc = np.zeros(power.shape[:-1])
    for k in bins:
        acc += power[..., k]
    return acc


def extract_trial(signal, channels, bins, plan: WindowPlan, log_power: bool = False) -> np.ndarray:
    """Features of one trial ``signal[channel, sample]`` -> (n_windows, n_ch * n_bands)."""
    x = np.asarray(signal, dtype=np.float64)[list(channels)]
    frames = np.lib.stride_tricks.sliding_window_view(x, plan.window_len, axis=-1)[:, :: plan.hop]
    power = one_sided_power(frames, plan.window())  # (ch, win, bin)
    feats = np.stack([_sum_bins(power, b) for b in bins], axis=-1)  # (ch, win, band)
    if log_power:
        feats = np.log(feats + LOG_POWER_EPS)
    return feats.transpose(1, 0, 2).reshape(feats.shape[1], -1)


def extract_features(ts: TrialSet, channels=DEFAULT_CHANNELS, bands=DEFAULT_BANDS,
                     plan: WindowPlan = WindowPlan(), *, allow_rate_mismatch: bool = False,
                     log_power: bool = False, threads: int = 1):
    """Band-power tensor (n_trials, n_windows, n_ch * n_bands) and per-window trial index."""
    channels = check_channels(channels, ts.n_channels)
    if ts.sample_rate_hz != plan.sample_rate_hz and not allow_rate_mismatch:
        raise InvalidArg(
            f"sample rate {ts.sample_rate_hz} Hz differs from the plan's "
            f"{plan.sample_rate_hz} Hz (override with allow_rate_mismatch)"
        )
    n_win = plan.n_windows(ts.n_samples)
    if n_win < 1:
        raise InvalidArg(f"{ts.n_samples} samples is shorter than one {plan.window_len}-point window")
    bins = band_bins(bands, plan.window_len, ts.sample_rate_hz)
    out = np.empty((ts.n_trials, n_win, len(channels) * len(bins)), dtype=np.float32)

    def work(t):
        out[t] = extract_trial(ts.data[t], channels, bins, plan, log_power)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(ts.n_trials)))
    else:
        for t in range(ts.n_trials):
            work(t)
    trial_index = np.repeat(np.arange(ts.n_trials), n_win)
    return out, trial_index


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray


def _flatten(features) -> np.ndarray:
    x = np.asarray(features)
    return x.reshape(x.shape[0], -1) if x.ndim > 2 else x


def zscore_fit(train_features) -> NormStats:
    """Per-feature mean and population std over the training rows, std floored."""
    x = _flatten(train_features).astype(np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise TooFewSamples("zscore_fit needs at least 2 training samples")
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), STD_FLOOR)
    return NormStats(mean, std)


def zscore_apply(features, stats: NormStats) -> np.ndarray:
    x = np.asarray(features)
    flat = _flatten(x)
    if flat.ndim != 2 or flat.shape[1] != stats.mean.shape[0]:
        raise ShapeError(
            f"feature length {flat.shape[-1]} does not match stats length {stats.mean.shape[0]}"
        )
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    z = (flat.astype(np.float64) - stats.mean) / stats.std
    return z.astype(dtype).reshape(x.shape)


class SequenceMode(str, enum.Enum):
    FEATURE_AS_STEPS = "feature_as_steps"
    WINDOW_AS_STEPS = "window_as_steps"


def to_sequences(raw, trial_labels, mode=SequenceMode.FEATURE_AS_STEPS,
                 window_steps: int = 1) -> FeatureDataset:
    """Turn (n_trials, n_windows, n_feat) window features into model samples.

    ``feature_as_steps``: one sample per window, each band power one time step.
    ``window_as_steps``: non-overlapping runs of ``window_steps`` windows per trial.
    """
    raw = np.asarray(raw, dtype=np.float32)
    trial_labels = np.asarray(trial_labels, dtype=np.float64)
    if raw.ndim != 3:
        raise ShapeError(f"raw features must be (trial, window, feature), got {raw.shape}")
    if trial_labels.shape != (raw.shape[0], N_LABEL_DIMS):
        raise ShapeError(f"trial labels must be ({raw.shape[0]}, {N_LABEL_DIMS})")
    n_trials, n_win, n_feat = raw.shape
    trial_classes = np.array(
        [[rating_to_class(r) for r in row] for row in trial_labels], dtype=np.uint8
    ).reshape(n_trials, N_LABEL_DIMS)

    mode = SequenceMode(mode)
    if mode is SequenceMode.FEATURE_AS_STEPS:
        feats = raw.reshape(n_trials * n_win, n_feat, 1)
        per_trial = n_win
    else:
        if not 1 <= window_steps <= n_win:
            raise InvalidArg(f"window_steps={window_steps} must lie in [1, {n_win}]")
        per_trial = n_win // window_steps
        used = raw[:, : per_trial * window_steps]
        feats = used.reshape(n_trials * per_trial, window_steps, n_feat)
    trial_index = np.repeat(np.arange(n_trials), per_trial)
    return FeatureDataset(
        features=np.ascontiguousarray(feats),
        classes=trial_classes[trial_index],
        trial_index=trial_index,
    )
