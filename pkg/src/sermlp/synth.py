"""Synthetic labelled corpus: harmonic tone bursts whose pitch, level and pausing drive the labels.

Each label is a known function of the generating parameters, so a working feature
extractor plus regressor must recover it. Used in place of licensed emotion corpora.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Manifest, UtteranceRecord, write_manifest
from .dsp import AudioBuffer, write_wav

SAMPLE_RATE = 16000
F0_RANGE = (80.0, 300.0)
AMP_RANGE = (0.1, 1.0)
SILENCE_RANGE = (0.0, 0.6)
DURATION_RANGE = (1.0, 3.0)
LABEL_NOISE = 0.05
N_HARMONICS = 4
FADE_S = 0.005

PARAMS_FILE = "params.csv"
MANIFEST_FILE = "manifest.csv"


@dataclass(frozen=True)
class UtteranceParams:
    utterance_id: str
    session: int
    duration: float
    f0: float
    amplitude: float
    silence: float

    def labels(self, noise: np.ndarray) -> tuple[float, float, float]:
        """Raw [1, 5] valence, arousal, dominance given three noise draws."""
        pitch = (self.f0 - F0_RANGE[0]) / (F0_RANGE[1] - F0_RANGE[0])
        speech = 1.0 - self.silence
        arousal = 0.8 * self.amplitude + 0.2 * speech
        valence = 0.6 * pitch + 0.4 * speech
        dominance = 0.7 * self.amplitude + 0.3 * pitch
        core = np.array([valence, arousal, dominance]) + noise
        return tuple(float(v) for v in 1.0 + 4.0 * np.clip(core, 0.0, 1.0))


def _burst_layout(n: int, n_silent: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask of voiced samples: 2-4 bursts separated by gaps totalling ``n_silent``."""
    voiced = np.ones(n, dtype=bool)
    if n_silent <= 0:
        return voiced
    n_bursts = int(rng.integers(2, 5))
    n_gaps = n_bursts + 1  # leading, between, trailing
    gap_share = rng.dirichlet(np.ones(n_gaps))
    gaps = np.floor(gap_share * n_silent).astype(int)
    gaps[-1] += n_silent - gaps.sum()
    burst_share = rng.dirichlet(np.ones(n_bursts))
    n_voiced = n - n_silent
    bursts = np.floor(burst_share * n_voiced).astype(int)
    bursts[-1] += n_voiced - bursts.sum()
    pos = 0
    for k in range(n_bursts):
        voiced[pos : pos + gaps[k]] = False
        pos += gaps[k] + bursts[k]
    voiced[pos:] = False
    return voiced


def synthesize(params: UtteranceParams, rng: np.random.Generator, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    n = int(round(params.duration * sample_rate))
    t = np.arange(n) / sample_rate
    phases = rng.uniform(0, 2 * np.pi, N_HARMONICS)
    tone = sum(np.sin(2 * np.pi * params.f0 * h * t + phases[h - 1]) / h for h in range(1, N_HARMONICS + 1))
    tone = tone / np.max(np.abs(tone))
    voiced = _burst_layout(n, int(round(params.silence * n)), rng)
    # short raised-cosine ramps at burst edges
    fade = max(1, int(FADE_S * sample_rate))
    kernel = np.hanning(2 * fade + 1)
    envelope = np.convolve(voiced.astype(float), kernel / kernel.sum(), mode="same")
    envelope = np.where(voiced, envelope, 0.0)
    return params.amplitude * tone * envelope


def gen_synthetic_corpus(n: int, sessions: int, seed: int, out_dir: str | Path, prefix: str = "SYN") -> Manifest:
    """Write ``n`` WAV files, ``manifest.csv`` and the generating ``params.csv`` into ``out_dir``.

    ``prefix`` starts every utterance id; give corpora that will be mixed distinct prefixes.
    """
    if sessions < 1 or n < sessions:
        raise ValueError(f"need n >= sessions >= 1, got n={n}, sessions={sessions}")
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records, params_rows = [], []
    for i in range(n):
        session = i % sessions + 1
        uid = f"{prefix}_S{session:02d}_{i:05d}"
        p = UtteranceParams(
            uid,
            session,
            float(rng.uniform(*DURATION_RANGE)),
            float(rng.uniform(*F0_RANGE)),
            float(rng.uniform(*AMP_RANGE)),
            float(rng.uniform(*SILENCE_RANGE)),
        )
        labels = p.labels(rng.normal(0.0, LABEL_NOISE, 3))
        audio = synthesize(p, rng)
        rel = f"wav/{uid}.wav"
        write_wav(out_dir / rel, AudioBuffer(audio, SAMPLE_RATE))
        speaker = f"S{session:02d}{'FM'[i // sessions % 2]}"
        records.append(UtteranceRecord(uid, "SYNTH", session, speaker, rel, labels))
        params_rows.append(p)
    manifest = Manifest(tuple(records))
    write_manifest(manifest, out_dir / MANIFEST_FILE)
    with (out_dir / PARAMS_FILE).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["utterance_id", "session", "duration", "f0", "amplitude", "silence"])
        for p in params_rows:
            writer.writerow([p.utterance_id, p.session, repr(p.duration), repr(p.f0), repr(p.amplitude), repr(p.silence)])
    return manifest


def read_params(path: str | Path) -> list[UtteranceParams]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [
            UtteranceParams(r["utterance_id"], int(r["session"]), float(r["duration"]), float(r["f0"]),
                            float(r["amplitude"]), float(r["silence"]))
            for r in csv.DictReader(fh)
        ]
