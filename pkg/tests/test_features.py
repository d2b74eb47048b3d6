"""Tests for framing, MFCC, F0, CQT, and the composite feature pipeline."""

import numpy as np
import pytest

from cogspeech.features import (
    FEATURE_DIM,
    HOP_SAMPLES,
    LOG_FLOOR,
    N_MEL_BANDS,
    SAMPLE_RATE,
    WINDOW_SAMPLES,
    FeatureNormalizer,
    composite_features,
    cqt,
    cqt_center_frequencies,
    estimate_f0,
    frame_signal,
    mel_band_edges,
    mel_energies,
    mfcc,
)


def _sine(freq, n=WINDOW_SAMPLES, amplitude=0.5, phase=0.0):
    t = np.arange(n) / SAMPLE_RATE
    return amplitude * np.sin(2 * np.pi * freq * t + phase)


class TestFraming:
    def test_exactly_one_window(self):
        frames = frame_signal(np.zeros(4000))
        assert frames.shape == (1, WINDOW_SAMPLES)

    def test_two_frames_with_hop(self):
        samples = np.arange(7200, dtype=np.float64)
        frames = frame_signal(samples)
        assert frames.shape == (2, WINDOW_SAMPLES)
        assert frames[0, 0] == 0.0 and frames[1, 0] == 3200.0

    def test_partial_trailing_window_dropped(self):
        assert frame_signal(np.zeros(7199)).shape[0] == 1

    def test_too_short_rejected(self):
        with pytest.raises(ValueError, match="too short"):
            frame_signal(np.zeros(3999))

    def test_count_formula_property(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(WINDOW_SAMPLES, 80_000))
            expected = (n - WINDOW_SAMPLES) // HOP_SAMPLES + 1
            assert frame_signal(np.zeros(n)).shape[0] == expected


class TestMFCC:
    def test_silence_flat_cepstrum(self):
        coeffs = mfcc(np.zeros(WINDOW_SAMPLES))
        # flat log spectrum at the floor: c0 = sqrt(26) * ln(1e-10), rest zero
        expected_c0 = np.sqrt(N_MEL_BANDS) * np.log(LOG_FLOOR)
        np.testing.assert_allclose(coeffs[0], expected_c0, atol=1e-9)
        np.testing.assert_allclose(coeffs[1:], 0.0, atol=1e-9)

    def test_pure_tone_band(self):
        energies = mel_energies(_sine(1000.0))
        band = int(np.argmax(energies))
        lo, _, hi = mel_band_edges()[band]
        assert lo < 1000.0 < hi

    def test_fft_matches_naive_dft(self):
        rng = np.random.default_rng(1)
        frame = rng.uniform(-0.5, 0.5, WINDOW_SAMPLES)
        fast = mfcc(frame)

        # reference path: explicit DFT sums instead of the FFT
        windowed = frame * np.hanning(WINDOW_SAMPLES)
        n = WINDOW_SAMPLES
        power = np.empty(n // 2 + 1)
        base = -2j * np.pi * np.arange(n) / n
        for k in range(n // 2 + 1):
            power[k] = abs(np.sum(windowed * np.exp(base * k))) ** 2
        from cogspeech.features import mel_filter_bank
        from scipy.fft import dct

        log_energies = np.log(np.maximum(mel_filter_bank() @ power, LOG_FLOOR))
        slow = dct(log_energies, type=2, norm="ortho")[:13]
        np.testing.assert_allclose(fast, slow, atol=1e-8)

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        frame = rng.normal(size=WINDOW_SAMPLES)
        assert mfcc(frame).tobytes() == mfcc(frame).tobytes()


class TestF0:
    def test_sine_200hz(self):
        assert abs(estimate_f0(_sine(200.0)) - 200.0) <= 2.0

    @pytest.mark.parametrize("freq", [70.0, 125.0, 240.0, 333.0, 390.0])
    def test_sine_sweep(self, freq):
        assert abs(estimate_f0(_sine(freq)) - freq) <= 2.0

    def test_white_noise_unvoiced(self):
        rng = np.random.default_rng(3)
        assert estimate_f0(rng.normal(0, 0.3, WINDOW_SAMPLES)) == 0.0

    def test_silence_unvoiced(self):
        assert estimate_f0(np.zeros(WINDOW_SAMPLES)) == 0.0

    def test_harmonic_signal_no_octave_error(self):
        # rich harmonics with a weak fundamental still resolve to f0
        f0 = 150.0
        frame = sum(
            (0.4 / h) * _sine(h * f0, phase=0.7 * h) for h in range(1, 12)
        )
        assert abs(estimate_f0(frame) - f0) <= 3.0


class TestCQT:
    def test_silence_at_floor(self):
        np.testing.assert_allclose(
            cqt(np.zeros(WINDOW_SAMPLES)), np.log(LOG_FLOOR), atol=1e-12
        )

    def test_220hz_peaks_one_octave_up(self):
        assert int(np.argmax(cqt(_sine(220.0)))) == 12

    def test_110hz_peaks_at_first_bin(self):
        assert int(np.argmax(cqt(_sine(110.0)))) == 0

    def test_center_frequencies_exact(self):
        centers = cqt_center_frequencies()
        expected = 110.0 * 2.0 ** (np.arange(24) / 12.0)
        np.testing.assert_array_equal(centers, expected)

    def test_bin_tracks_tone(self):
        for b in (3, 8, 17, 23):
            freq = 110.0 * 2.0 ** (b / 12.0)
            assert int(np.argmax(cqt(_sine(freq)))) == b


class TestComposite:
    def test_single_frame_shape(self):
        feats = composite_features(np.full(4000, 0.1))
        assert feats.shape == (1, FEATURE_DIM)
        assert np.all(np.isfinite(feats))

    def test_identity_normalizer_is_identity(self):
        rng = np.random.default_rng(4)
        samples = rng.uniform(-0.5, 0.5, 8000)
        raw = composite_features(samples)
        normalized = composite_features(samples, FeatureNormalizer())
        assert raw.tobytes() == normalized.tobytes()

    def test_training_stats_center_columns(self):
        rng = np.random.default_rng(5)
        signals = [rng.uniform(-0.5, 0.5, 12_000) for _ in range(4)]
        raw = [composite_features(s) for s in signals]
        normalizer = FeatureNormalizer.fit(raw)
        normalized = np.concatenate(
            [composite_features(s, normalizer) for s in signals]
        )
        np.testing.assert_allclose(normalized.mean(axis=0), 0.0, atol=1e-10)

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(6)
        samples = rng.uniform(-0.9, 0.9, 10_000)
        a = composite_features(samples)
        b = composite_features(samples)
        assert a.tobytes() == b.tobytes()
