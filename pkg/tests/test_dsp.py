import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sermlp import dsp
from sermlp.dsp import AudioBuffer, Spectrum

SR = 16000


def tone(freq, n, sr=SR, amp=1.0, phase=0.0):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / sr + phase)


class TestFraming:
    def test_exactly_one_window(self):
        fs = dsp.frame_signal(AudioBuffer(np.zeros(400), SR), 25, 10)
        assert len(fs) == 1 and fs.win_len == 400 and fs.hop_len == 160

    def test_one_second_count_by_enumeration(self):
        n, win, hop = 16000, 400, 160
        starts = [s for s in range(0, n, hop) if s + win <= n]
        fs = dsp.frame_signal(AudioBuffer(np.zeros(n), SR), 25, 10)
        assert len(fs) == len(starts) == 98

    def test_shorter_than_window(self):
        assert len(dsp.frame_signal(AudioBuffer(np.zeros(399), SR), 25, 10)) == 0

    def test_empty_audio(self):
        fs = dsp.frame_signal(AudioBuffer(np.zeros(0), SR), 25, 10)
        assert len(fs) == 0 and fs.frames.shape == (0, 400)

    @pytest.mark.parametrize("win, hop", [(0, 10), (25, 0), (-5, -10), (10, 25)])
    def test_bad_window(self, win, hop):
        with pytest.raises(ValueError):
            dsp.frame_signal(AudioBuffer(np.zeros(1000), SR), win, hop)

    @settings(max_examples=60, deadline=None)
    @given(n=st.integers(0, 3000), win=st.integers(1, 80), hop_frac=st.floats(0.05, 1.0))
    def test_frames_tile_the_signal(self, n, win, hop_frac):
        sr = 1000  # 1 sample per ms keeps the ms -> samples mapping exact
        hop = max(1, int(win * hop_frac))
        x = np.arange(n, dtype=float)
        fs = dsp.frame_signal(AudioBuffer(x, sr), win, hop)
        expected = (n - win) // hop + 1 if n >= win else 0
        assert len(fs) == expected
        assert np.array_equal(fs.starts, np.arange(expected) * hop)
        for k in range(len(fs)):
            assert np.array_equal(fs.frames[k], x[k * hop : k * hop + win])

    def test_audio_rejects_nan(self):
        with pytest.raises(ValueError):
            AudioBuffer(np.array([0.0, np.nan]), SR)
        with pytest.raises(ValueError):
            AudioBuffer(np.zeros(3), 0)


class TestRms:
    def test_zero(self):
        assert dsp.rms(np.zeros(10)) == 0.0

    def test_constant(self):
        assert dsp.rms(np.full(7, -0.4)) == pytest.approx(0.4, abs=1e-15)

    def test_hand_value(self):
        assert dsp.rms([3, 4]) == pytest.approx(math.sqrt(12.5), abs=1e-12)
        assert dsp.rms([3, 4]) == pytest.approx(3.53553, abs=1e-5)

    def test_empty(self):
        with pytest.raises(ValueError):
            dsp.rms([])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=50), st.floats(-100, 100))
    def test_homogeneity(self, frame, c):
        frame = np.array(frame)
        assert dsp.rms(c * frame) == pytest.approx(abs(c) * dsp.rms(frame), rel=1e-12, abs=1e-150)


class TestMagnitudeSpectrum:
    def test_zero_frame(self):
        s = dsp.magnitude_spectrum(np.zeros(400), SR)
        assert s.magnitudes.shape == (257,) and not s.magnitudes.any()
        assert s.bin_hz == SR / 512

    def test_peak_at_exact_bin(self):
        k = 20
        s = dsp.magnitude_spectrum(tone(k * SR / 512, 400), SR)
        assert int(np.argmax(s.magnitudes)) == k

    def test_parseval(self, rng):
        for _ in range(20):
            x = rng.standard_normal(400)
            s = dsp.magnitude_spectrum(x, SR)
            n_fft = 512
            w = x * dsp._hann(400)
            time_energy = np.sum(w**2)
            m2 = s.magnitudes**2
            freq_energy = (m2[0] + m2[-1] + 2 * m2[1:-1].sum()) / n_fft
            assert abs(freq_energy - time_energy) / time_energy < 1e-6

    def test_empty(self):
        with pytest.raises(ValueError):
            dsp.magnitude_spectrum([], SR)

    def test_power_of_two_size(self):
        assert dsp.fft_size(400) == 512
        assert dsp.fft_size(512) == 512
        assert dsp.fft_size(1102) == 2048


def _dct_matrix(n):
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.sqrt(2.0 / n) * np.cos(np.pi * k * (2 * i + 1) / (2 * n))
    m[0] /= np.sqrt(2.0)
    return m


class TestMfcc:
    def test_zero_spectrum(self):
        c = dsp.mfcc(Spectrum(np.zeros(257), SR / 512), 26, 4)
        assert c.shape == (4,)
        assert np.allclose(c, 0.0, atol=1e-9)

    def test_deterministic(self, rng):
        s = dsp.magnitude_spectrum(rng.standard_normal(400), SR)
        assert np.array_equal(dsp.mfcc(s), dsp.mfcc(s))

    def test_matches_matrix_dct(self, rng):
        for _ in range(10):
            s = dsp.magnitude_spectrum(rng.standard_normal(400), SR)
            logmel = dsp.log_mel_energies(s.magnitudes, s.bin_hz, 26)[0]
            expected = (_dct_matrix(26) @ logmel)[1:5]
            assert np.max(np.abs(dsp.mfcc(s, 26, 4) - expected)) < 1e-9

    def test_too_many_coeffs(self):
        with pytest.raises(ValueError):
            dsp.mfcc(Spectrum(np.ones(257), SR / 512), n_mels=4, n_coeffs=5)

    def test_filterbank_shape_and_span(self):
        fb = dsp.mel_filterbank(26, 257, SR)
        assert fb.shape == (26, 257)
        assert np.all(fb >= 0) and np.all(fb.max(axis=1) > 0)
        freqs = np.linspace(0, SR / 2, 257)
        assert not fb[:, freqs < 20.0].any()


class TestF0:
    def test_200hz_sine(self):
        assert dsp.f0_autocorrelation(tone(200, 400), SR, 50, 500) == pytest.approx(200, abs=2)

    def test_zero_frame(self):
        assert dsp.f0_autocorrelation(np.zeros(400), SR) == 0.0

    def test_white_noise_mostly_unvoiced(self, rng):
        f0 = [dsp.f0_autocorrelation(rng.standard_normal(400), SR, 50, 500) for _ in range(100)]
        assert np.mean(np.array(f0) == 0.0) >= 0.9

    def test_sines_60_to_450(self, rng):
        freqs = rng.uniform(60, 450, 200)
        frames = np.array([tone(f, 400, phase=rng.uniform(0, 2 * np.pi)) for f in freqs])
        est = dsp.f0_batch(frames, SR, 50, 500)
        assert np.mean(np.abs(est - freqs) <= 2.0) >= 0.95

    def test_batch_matches_single(self, rng):
        frames = np.array([tone(f, 400) for f in (90, 150, 333)] + [rng.standard_normal(400)])
        batch = dsp.f0_batch(frames, SR)
        single = [dsp.f0_autocorrelation(f, SR) for f in frames]
        assert np.array_equal(batch, single)

    def test_insufficient_context(self):
        # shorter than two periods of fmax
        assert dsp.f0_autocorrelation(tone(400, 50), SR, 50, 500) == 0.0

    def test_bad_range(self):
        with pytest.raises(ValueError):
            dsp.f0_autocorrelation(tone(200, 400), SR, 500, 50)
        with pytest.raises(ValueError):
            dsp.f0_autocorrelation(tone(200, 400), SR, 50, 9000)


class TestSpectralSlope:
    bin_hz = SR / 512

    def test_flat(self):
        assert dsp.spectral_slope(Spectrum(np.full(257, 0.3), self.bin_hz), 0, 500) == pytest.approx(0, abs=1e-12)

    def test_exact_line(self):
        freqs = np.arange(257) * self.bin_hz
        mags = 10 ** ((-0.02 * freqs + 5.0) / 20.0)
        s = Spectrum(mags, self.bin_hz)
        assert abs(dsp.spectral_slope(s, 500, 1500) - (-0.02)) < 1e-9

    def test_random_vs_normal_equations(self, rng):
        freqs = np.arange(257) * self.bin_hz
        for lo, hi in [(0, 500), (500, 1500), (100, 8000)]:
            mags = rng.uniform(0, 2, 257)
            mask = (freqs >= lo) & (freqs <= hi)
            a = np.column_stack([freqs[mask], np.ones(mask.sum())])
            db = 20 * np.log10(mags[mask] + 1e-10)
            slope = np.linalg.solve(a.T @ a, a.T @ db)[0]
            assert abs(dsp.spectral_slope(Spectrum(mags, self.bin_hz), lo, hi) - slope) < 1e-9

    def test_scale_invariance(self, rng):
        mags = rng.uniform(0.1, 2, 257)
        base = dsp.spectral_slope(Spectrum(mags, self.bin_hz), 0, 500)
        for c in (0.01, 3.0, 1e4):
            assert abs(dsp.spectral_slope(Spectrum(c * mags, self.bin_hz), 0, 500) - base) < 1e-9

    def test_too_few_bins(self):
        with pytest.raises(ValueError):
            dsp.spectral_slope(Spectrum(np.ones(257), self.bin_hz), 100, 110)

    def test_band_above_nyquist(self):
        with pytest.raises(ValueError):
            dsp.spectral_slope(Spectrum(np.ones(257), self.bin_hz), 0, 9000)


class TestSpectralFlux:
    def test_identical(self, rng):
        s = Spectrum(rng.uniform(size=257), 31.25)
        assert dsp.spectral_flux(s, s) == 0.0

    def test_orthogonal(self):
        a, b = np.zeros(8), np.zeros(8)
        a[1], b[5] = 3.0, 0.5
        assert dsp.spectral_flux(Spectrum(a, 1.0), Spectrum(b, 1.0)) == pytest.approx(math.sqrt(2), abs=1e-15)

    def test_random_vs_formula(self, rng):
        for _ in range(20):
            a, b = rng.uniform(size=257), rng.uniform(size=257)
            expected = math.sqrt(sum((x / np.linalg.norm(a) - y / np.linalg.norm(b)) ** 2 for x, y in zip(a, b)))
            got = dsp.spectral_flux(Spectrum(a, 1.0), Spectrum(b, 1.0))
            assert abs(got - expected) < 1e-12
            assert 0.0 <= got <= 2.0

    def test_mismatch(self):
        with pytest.raises(ValueError):
            dsp.spectral_flux(Spectrum(np.ones(5), 1.0), Spectrum(np.ones(6), 1.0))

    def test_series_first_frame_zero(self, rng):
        mags = rng.uniform(size=(5, 33))
        flux = dsp.spectral_flux_series(mags)
        assert flux[0] == 0.0
        assert flux[3] == pytest.approx(dsp.spectral_flux(Spectrum(mags[3], 1.0), Spectrum(mags[2], 1.0)), abs=1e-15)


def test_wav_round_trip(tmp_path):
    x = tone(220, 1600, amp=0.5)
    dsp.write_wav(tmp_path / "a.wav", AudioBuffer(x, SR))
    back = dsp.read_wav(tmp_path / "a.wav")
    assert back.sample_rate == SR
    assert np.max(np.abs(back.samples - x)) < 1.0 / 32767
