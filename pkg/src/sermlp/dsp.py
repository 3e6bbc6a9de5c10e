"""Frame-level signal processing: framing, energy, spectra and low-level descriptors."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.fft import dct
from scipy.io import wavfile

LOG_FLOOR = 1e-10
DEFAULT_VOICING_THRESHOLD = 0.3
# A later autocorrelation peak only wins if it beats the earliest strong peak by this ratio;
# guards against picking a multiple of the true period.
DEFAULT_OCTAVE_RATIO = 0.9
MEL_FMIN_HZ = 20.0


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("audio samples must be one-dimensional")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("audio samples contain NaN or Inf")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FrameSeries:
    frames: np.ndarray  # (n_frames, win_len)
    win_len: int
    hop_len: int
    sample_rate: int

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def starts(self) -> np.ndarray:
        return np.arange(len(self)) * self.hop_len


@dataclass(frozen=True)
class Spectrum:
    magnitudes: np.ndarray
    bin_hz: float

    @property
    def n_fft(self) -> int:
        return 2 * (self.magnitudes.shape[-1] - 1)

    @property
    def sample_rate(self) -> float:
        return self.bin_hz * self.n_fft


def read_wav(path: str | Path) -> AudioBuffer:
    """Read a PCM or float WAV file as mono floats in [-1, 1]."""
    sr, data = wavfile.read(str(path))
    if np.issubdtype(data.dtype, np.integer):
        info = np.iinfo(data.dtype)
        if info.min == 0:  # unsigned 8-bit
            x = (data.astype(np.float64) - 128.0) / 128.0
        else:
            x = data.astype(np.float64) / float(-info.min)
    else:
        x = data.astype(np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    return AudioBuffer(x, sr)


def write_wav(path: str | Path, audio: AudioBuffer) -> None:
    """Write 16-bit PCM."""
    pcm = np.round(np.clip(audio.samples, -1.0, 1.0) * 32767.0).astype(np.int16)
    wavfile.write(str(path), audio.sample_rate, pcm)


def ms_to_samples(ms: float, sample_rate: int) -> int:
    return int(round(ms * sample_rate / 1000.0))


def frame_signal(audio: AudioBuffer, win_ms: float = 25.0, hop_ms: float = 10.0) -> FrameSeries:
    """Cut audio into overlapping windows; a trailing partial window is dropped."""
    if hop_ms <= 0 or win_ms <= 0:
        raise ValueError("window and hop must be positive")
    if win_ms < hop_ms:
        raise ValueError(f"window ({win_ms} ms) shorter than hop ({hop_ms} ms)")
    win = ms_to_samples(win_ms, audio.sample_rate)
    hop = ms_to_samples(hop_ms, audio.sample_rate)
    if win < 1 or hop < 1:
        raise ValueError("window or hop rounds to zero samples at this sample rate")
    x = audio.samples
    if x.size < win:
        frames = np.empty((0, win))
    else:
        frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop]
    return FrameSeries(frames, win, hop, audio.sample_rate)


def rms(frame) -> float:
    x = np.asarray(frame, dtype=np.float64)
    if x.size == 0:
        raise ValueError("rms of an empty frame")
    return float(np.sqrt(np.mean(x * x)))


def frame_rms(frames: np.ndarray) -> np.ndarray:
    """Row-wise RMS of a (n_frames, win_len) matrix."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[0] == 0:
        return np.zeros(0)
    return np.sqrt(np.mean(frames * frames, axis=1))


@lru_cache(maxsize=32)
def _hann(n: int) -> np.ndarray:
    w = sps.get_window("hann", n, fftbins=True)
    w.setflags(write=False)
    return w


def fft_size(win_len: int) -> int:
    return 1 << max(0, int(win_len - 1).bit_length())


def magnitude_spectra(frames: np.ndarray, sample_rate: int) -> tuple[np.ndarray, float]:
    """Hann-windowed one-sided magnitude spectra for every row of ``frames``."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    win_len = frames.shape[1]
    if win_len == 0:
        raise ValueError("empty frame")
    n_fft = fft_size(win_len)
    mags = np.abs(np.fft.rfft(frames * _hann(win_len), n=n_fft, axis=1))
    return mags, sample_rate / n_fft


def magnitude_spectrum(frame, sample_rate: int) -> Spectrum:
    x = np.asarray(frame, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty frame")
    mags, bin_hz = magnitude_spectra(x[None, :], sample_rate)
    return Spectrum(mags[0], bin_hz)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=32)
def mel_filterbank(n_mels: int, n_bins: int, sample_rate: float) -> np.ndarray:
    """Triangular mel filters, shape (n_mels, n_bins), spanning 20 Hz to Nyquist."""
    nyquist = sample_rate / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(MEL_FMIN_HZ), hz_to_mel(nyquist), n_mels + 2))
    freqs = np.linspace(0.0, nyquist, n_bins)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def log_mel_energies(magnitudes: np.ndarray, bin_hz: float, n_mels: int) -> np.ndarray:
    mags = np.atleast_2d(np.asarray(magnitudes, dtype=np.float64))
    n_bins = mags.shape[1]
    fb = mel_filterbank(n_mels, n_bins, bin_hz * 2 * (n_bins - 1))
    return np.log(np.maximum((mags * mags) @ fb.T, LOG_FLOOR))


def mfcc_batch(magnitudes: np.ndarray, bin_hz: float, n_mels: int = 26, n_coeffs: int = 4) -> np.ndarray:
    if n_coeffs > n_mels:
        raise ValueError(f"n_coeffs ({n_coeffs}) exceeds n_mels ({n_mels})")
    if n_coeffs < 1:
        raise ValueError("n_coeffs must be at least 1")
    logmel = log_mel_energies(magnitudes, bin_hz, n_mels)
    return dct(logmel, type=2, norm="ortho", axis=1)[:, 1 : n_coeffs + 1]


def mfcc(spectrum: Spectrum, n_mels: int = 26, n_coeffs: int = 4) -> np.ndarray:
    """Cepstral coefficients 1..n_coeffs (coefficient 0 is dropped)."""
    return mfcc_batch(spectrum.magnitudes[None, :], spectrum.bin_hz, n_mels, n_coeffs)[0]


def _lag_range(sample_rate: float, fmin: float, fmax: float) -> tuple[int, int]:
    if not 0 < fmin < fmax < sample_rate / 2:
        raise ValueError(f"need 0 < fmin < fmax < Nyquist, got fmin={fmin}, fmax={fmax}")
    return int(np.floor(sample_rate / fmax)), int(np.ceil(sample_rate / fmin))


def nccf(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """Normalized cross-correlation of each frame with its own lagged copy.

    Entry [i, t] correlates x[:N-t] with x[t:], normalized by the energies of the two
    overlapping segments, so a periodic signal scores ~1 at every multiple of its period.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    n = frames.shape[1]
    max_lag = min(max_lag, n - 1)
    spec = np.fft.rfft(frames, n=fft_size(2 * n), axis=1)
    acf = np.fft.irfft(spec * np.conj(spec), axis=1)[:, : max_lag + 1]
    csum = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames * frames, axis=1)], axis=1)
    lags = np.arange(max_lag + 1)
    head = csum[:, n - lags]
    tail = csum[:, -1:] - csum[:, lags]
    denom = np.sqrt(head * tail)
    out = np.zeros_like(acf)
    np.divide(acf, denom, out=out, where=denom > 1e-12)
    return out


def f0_batch(
    frames: np.ndarray,
    sample_rate: float,
    fmin: float = 50.0,
    fmax: float = 500.0,
    voicing_threshold: float = DEFAULT_VOICING_THRESHOLD,
    octave_ratio: float = DEFAULT_OCTAVE_RATIO,
) -> np.ndarray:
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    n_frames, n = frames.shape
    lag_lo, lag_hi = _lag_range(sample_rate, fmin, fmax)
    lag_lo = max(lag_lo, 2)
    lag_hi = min(lag_hi, n - 2)
    out = np.zeros(n_frames)
    if n_frames == 0 or n < 2 * lag_lo or lag_hi <= lag_lo:
        return out
    r = nccf(frames, lag_hi + 1)
    seg = r[:, lag_lo : lag_hi + 1]
    prev = r[:, lag_lo - 1 : lag_hi]
    nxt = r[:, lag_lo + 1 : lag_hi + 2]
    peak = seg.max(axis=1)
    candidate = (seg >= prev) & (seg >= nxt) & (seg >= octave_ratio * peak[:, None])
    voiced = (peak >= voicing_threshold) & candidate.any(axis=1)
    if not voiced.any():
        return out
    rows = np.flatnonzero(voiced)
    idx = candidate[rows].argmax(axis=1)
    a, b, c = prev[rows, idx], seg[rows, idx], nxt[rows, idx]
    curv = a - 2.0 * b + c
    shift = np.zeros_like(b)
    np.divide(0.5 * (a - c), curv, out=shift, where=np.abs(curv) > 1e-12)
    shift = np.clip(shift, -0.5, 0.5)
    out[rows] = sample_rate / (lag_lo + idx + shift)
    return out


def f0_autocorrelation(
    frame,
    sample_rate: float,
    fmin: float = 50.0,
    fmax: float = 500.0,
    voicing_threshold: float = DEFAULT_VOICING_THRESHOLD,
) -> float:
    """Fundamental frequency of one frame in Hz, or 0 when unvoiced.

    Searches lags between sample_rate/fmax and sample_rate/fmin (capped by the frame
    length) for the earliest normalized-autocorrelation peak within ``DEFAULT_OCTAVE_RATIO``
    of the strongest one, then refines the lag with a parabola through its neighbours.
    Frames shorter than two periods of ``fmax`` carry no usable context and return 0.
    """
    x = np.asarray(frame, dtype=np.float64)
    return float(f0_batch(x[None, :], sample_rate, fmin, fmax, voicing_threshold)[0])


def spectral_slope_batch(magnitudes: np.ndarray, bin_hz: float, band_lo: float, band_hi: float) -> np.ndarray:
    mags = np.atleast_2d(np.asarray(magnitudes, dtype=np.float64))
    nyquist = bin_hz * (mags.shape[1] - 1)
    if not band_lo < band_hi or band_hi > nyquist + 1e-9:
        raise ValueError(f"invalid band [{band_lo}, {band_hi}] for Nyquist {nyquist}")
    freqs = np.arange(mags.shape[1]) * bin_hz
    mask = (freqs >= band_lo) & (freqs <= band_hi)
    if mask.sum() < 2:
        raise ValueError(f"band [{band_lo}, {band_hi}] Hz holds fewer than 2 bins")
    f = freqs[mask] - freqs[mask].mean()
    db = 20.0 * np.log10(mags[:, mask] + LOG_FLOOR)
    db = db - db.mean(axis=1, keepdims=True)
    return (db @ f) / (f @ f)


def spectral_slope(spectrum: Spectrum, band_lo: float, band_hi: float) -> float:
    """Least-squares slope (dB per Hz) of the log-magnitude spectrum over a band."""
    return float(spectral_slope_batch(spectrum.magnitudes[None, :], spectrum.bin_hz, band_lo, band_hi)[0])


def _unit_rows(mags: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mags, axis=-1, keepdims=True)
    out = np.zeros_like(mags)
    np.divide(mags, norms, out=out, where=norms > 0)
    return out


def spectral_flux_series(magnitudes: np.ndarray) -> np.ndarray:
    """Flux between consecutive rows; the first frame gets 0."""
    mags = np.atleast_2d(np.asarray(magnitudes, dtype=np.float64))
    out = np.zeros(mags.shape[0])
    if mags.shape[0] > 1:
        unit = _unit_rows(mags)
        out[1:] = np.linalg.norm(np.diff(unit, axis=0), axis=1)
    return out


def spectral_flux(current: Spectrum, previous: Spectrum) -> float:
    a = np.asarray(current.magnitudes, dtype=np.float64)
    b = np.asarray(previous.magnitudes, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"bin count mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    return float(np.linalg.norm(_unit_rows(a) - _unit_rows(b)))
