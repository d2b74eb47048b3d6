"""Handcrafted acoustic features over 250 ms frames with 50 ms overlap.

Each frame yields a 38-dimensional composite vector:

    [ 13 MFCC | 1 F0 | 24 CQT log-magnitude bins ]

Dimensions are conventional speech-analysis values (13 cepstra from a
26-band mel filterbank, 24 constant-Q bins at 12 per octave from 110 Hz,
autocorrelation pitch in 60-400 Hz) fixed so the downstream input width
stays stable.  All functions are pure and operate on float64 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.fft import dct

SAMPLE_RATE = 16000
WINDOW_SAMPLES = 4000  # 250 ms
HOP_SAMPLES = 3200  # 250 ms window with 50 ms overlap -> 200 ms hop

N_MFCC = 13
N_MEL_BANDS = 26
MEL_FMAX = 8000.0

N_CQT_BINS = 24
CQT_FMIN = 110.0
CQT_BINS_PER_OCTAVE = 12

F0_MIN = 60.0
F0_MAX = 400.0
VOICING_THRESHOLD = 0.3

LOG_FLOOR = 1e-10
FEATURE_DIM = N_MFCC + 1 + N_CQT_BINS


@dataclass(frozen=True)
class AudioSignal:
    """Mono 16 kHz waveform with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        object.__setattr__(
            self, "samples", np.asarray(self.samples, dtype=np.float64)
        )
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(
                f"sample_rate: expected {SAMPLE_RATE} Hz, got {self.sample_rate}"
            )
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples: non-finite values")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


def _samples_of(signal) -> np.ndarray:
    if isinstance(signal, AudioSignal):
        return signal.samples
    return np.asarray(signal, dtype=np.float64)


def frame_signal(signal) -> np.ndarray:
    """Slice into 4000-sample frames at hop 3200; trailing partials dropped.

    Returns an array of shape (num_frames, 4000) where
    num_frames = (len(samples) - window) // hop + 1.
    """
    samples = _samples_of(signal)
    if samples.size < WINDOW_SAMPLES:
        raise ValueError(
            f"signal too short: {samples.size} samples, one window needs {WINDOW_SAMPLES}"
        )
    num_frames = (samples.size - WINDOW_SAMPLES) // HOP_SAMPLES + 1
    starts = np.arange(num_frames) * HOP_SAMPLES
    return np.stack([samples[s : s + WINDOW_SAMPLES] for s in starts])


# MFCC -----------------------------------------------------------------


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=1)
def mel_band_edges() -> np.ndarray:
    """(N_MEL_BANDS, 3) array of (low, center, high) frequencies in Hz."""
    mels = np.linspace(_hz_to_mel(0.0), _hz_to_mel(MEL_FMAX), N_MEL_BANDS + 2)
    hz = _mel_to_hz(mels)
    return np.stack([hz[:-2], hz[1:-1], hz[2:]], axis=1)


@lru_cache(maxsize=1)
def mel_filter_bank() -> np.ndarray:
    """Triangular mel filters over the rfft bins of one frame."""
    freqs = np.fft.rfftfreq(WINDOW_SAMPLES, d=1.0 / SAMPLE_RATE)
    bank = np.zeros((N_MEL_BANDS, freqs.size))
    for b, (lo, center, hi) in enumerate(mel_band_edges()):
        rising = (freqs - lo) / (center - lo)
        falling = (hi - freqs) / (hi - center)
        bank[b] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


@lru_cache(maxsize=1)
def _hann_window() -> np.ndarray:
    return np.hanning(WINDOW_SAMPLES)


def mel_energies(frame: np.ndarray) -> np.ndarray:
    """26 mel filterbank energies of the Hann-windowed power spectrum."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (WINDOW_SAMPLES,):
        raise ValueError(f"expected a frame of {WINDOW_SAMPLES} samples, got {frame.shape}")
    spectrum = np.fft.rfft(frame * _hann_window())
    power = spectrum.real**2 + spectrum.imag**2
    return mel_filter_bank() @ power


def mfcc(frame: np.ndarray) -> np.ndarray:
    """13 cepstral coefficients (c0 included), orthonormal DCT-II of the
    floored log mel energies."""
    log_energies = np.log(np.maximum(mel_energies(frame), LOG_FLOOR))
    return dct(log_energies, type=2, norm="ortho")[:N_MFCC]


# F0 -------------------------------------------------------------------

_LAG_MIN = int(SAMPLE_RATE / F0_MAX)  # 40 samples
_LAG_MAX = int(round(SAMPLE_RATE / F0_MIN))  # 267 samples


def estimate_f0(frame: np.ndarray) -> float:
    """Autocorrelation pitch in 60-400 Hz; 0.0 for unvoiced frames.

    A frame is unvoiced when the normalized autocorrelation peak in the
    search range falls below 0.3.  Among local maxima within 85% of the
    peak the smallest lag wins, which suppresses octave-down errors on
    strongly periodic frames; the winning lag is refined by parabolic
    interpolation.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (WINDOW_SAMPLES,):
        raise ValueError(f"expected a frame of {WINDOW_SAMPLES} samples, got {frame.shape}")
    x = frame - frame.mean()
    energy = float(np.dot(x, x))
    if energy < 1e-12:
        return 0.0

    nfft = 1 << (2 * WINDOW_SAMPLES - 1).bit_length()
    spectrum = np.fft.rfft(x, nfft)
    autocorr = np.fft.irfft(spectrum.real**2 + spectrum.imag**2, nfft)
    rho = autocorr[: _LAG_MAX + 2] / autocorr[0]

    window = rho[_LAG_MIN : _LAG_MAX + 1]
    peak = window.max()
    if peak < VOICING_THRESHOLD:
        return 0.0

    interior = rho[_LAG_MIN : _LAG_MAX + 1]
    is_local_max = np.ones_like(interior, dtype=bool)
    is_local_max &= interior >= rho[_LAG_MIN - 1 : _LAG_MAX]
    is_local_max &= interior >= rho[_LAG_MIN + 1 : _LAG_MAX + 2]
    candidates = np.flatnonzero(is_local_max & (interior >= 0.85 * peak))
    best = int(candidates[0]) + _LAG_MIN if candidates.size else int(np.argmax(window)) + _LAG_MIN

    # parabolic refinement around the winning lag
    r_prev, r_best, r_next = rho[best - 1], rho[best], rho[best + 1]
    denom = r_prev - 2.0 * r_best + r_next
    shift = 0.0 if denom == 0.0 else 0.5 * (r_prev - r_next) / denom
    shift = float(np.clip(shift, -0.5, 0.5))
    return SAMPLE_RATE / (best + shift)


# CQT ------------------------------------------------------------------

CQT_Q = 1.0 / (2.0 ** (1.0 / CQT_BINS_PER_OCTAVE) - 1.0)


def cqt_center_frequencies() -> np.ndarray:
    """fmin * 2^(b/12) for the 24 bins (two octaves from 110 Hz)."""
    return CQT_FMIN * 2.0 ** (np.arange(N_CQT_BINS) / CQT_BINS_PER_OCTAVE)


@lru_cache(maxsize=1)
def _cqt_kernels() -> np.ndarray:
    """Complex windowed kernels, each centered in a 4000-sample frame."""
    kernels = np.zeros((N_CQT_BINS, WINDOW_SAMPLES), dtype=np.complex128)
    for b, f in enumerate(cqt_center_frequencies()):
        length = int(round(CQT_Q * SAMPLE_RATE / f))
        window = np.hanning(length)
        phase = np.exp(-2j * np.pi * f * np.arange(length) / SAMPLE_RATE)
        start = (WINDOW_SAMPLES - length) // 2
        kernels[b, start : start + length] = window * phase / window.sum()
    return kernels


def cqt(frame: np.ndarray) -> np.ndarray:
    """24 log-magnitude constant-Q bins, floored at the log floor."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (WINDOW_SAMPLES,):
        raise ValueError(f"expected a frame of {WINDOW_SAMPLES} samples, got {frame.shape}")
    magnitudes = np.abs(_cqt_kernels() @ frame)
    return np.log(np.maximum(magnitudes, LOG_FLOOR))


# composite ------------------------------------------------------------


def frame_features(frame: np.ndarray) -> np.ndarray:
    """One frame's [mfcc | f0 | cqt] concatenation, shape (38,)."""
    return np.concatenate([mfcc(frame), [estimate_f0(frame)], cqt(frame)])


@dataclass
class FeatureNormalizer:
    """Per-column z-normalization with statistics from the training split.

    Fitting on anything but the training split leaks evaluation data; the
    caller owns that discipline.
    """

    mean: np.ndarray = field(default_factory=lambda: np.zeros(FEATURE_DIM))
    std: np.ndarray = field(default_factory=lambda: np.ones(FEATURE_DIM))

    @classmethod
    def fit(cls, sequences) -> "FeatureNormalizer":
        stacked = np.concatenate([np.asarray(s) for s in sequences], axis=0)
        mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)
        return cls(mean=mean, std=std)

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std


def composite_features(signal, normalizer: FeatureNormalizer | None = None) -> np.ndarray:
    """Per-frame composite feature matrix, shape (num_frames, 38)."""
    frames = frame_signal(signal)
    features = np.stack([frame_features(f) for f in frames])
    if normalizer is not None:
        features = normalizer.transform(features)
    return features
