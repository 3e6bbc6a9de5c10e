"""Per-utterance statistical features: LLD trajectories summarized by mean, std and silence ratio."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import dsp

NATIVE_LLDS = (
    "rms_loudness",
    "spectral_slope_0_500",
    "spectral_slope_500_1500",
    "spectral_flux",
    "mfcc1",
    "mfcc2",
    "mfcc3",
    "mfcc4",
    "f0",
)
SILENCE_NAME = "silence_ratio"


@dataclass(frozen=True)
class LLDMatrix:
    values: np.ndarray  # (frames, K)
    descriptor_names: tuple[str, ...]
    utterance_id: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("LLD values must be a frames x descriptors matrix")
        names = tuple(self.descriptor_names)
        if len(names) < 1 or values.shape[1] != len(names):
            raise ValueError(f"{values.shape[1]} columns but {len(names)} descriptor names")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"non-finite LLD values in utterance {self.utterance_id!r}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "descriptor_names", names)


@dataclass(frozen=True)
class HsfVector:
    values: np.ndarray
    utterance_id: str
    names: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).ravel()
        object.__setattr__(self, "values", values)
        if self.names and len(self.names) != values.size:
            raise ValueError("feature name count does not match vector length")
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def silence_ratio(self) -> float:
        return float(self.values[-1])


@dataclass(frozen=True)
class SilenceConfig:
    factor: float = 0.3
    win_ms: float = 25.0
    hop_ms: float = 10.0

    def __post_init__(self):
        if not self.factor > 0:
            raise ValueError(f"silence factor must be positive, got {self.factor}")


@dataclass(frozen=True)
class LldConfig:
    descriptors: tuple[str, ...] = NATIVE_LLDS
    win_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 26
    f0_min: float = 50.0
    f0_max: float = 500.0
    voicing_threshold: float = dsp.DEFAULT_VOICING_THRESHOLD

    def __post_init__(self):
        unknown = [d for d in self.descriptors if d not in NATIVE_LLDS]
        if unknown:
            raise ValueError(f"unknown native descriptors: {unknown}")
        if not self.descriptors:
            raise ValueError("at least one descriptor is required")
        object.__setattr__(self, "descriptors", tuple(self.descriptors))


def hsf_names(descriptor_names: Sequence[str]) -> tuple[str, ...]:
    return (
        tuple(f"{n}_mean" for n in descriptor_names)
        + tuple(f"{n}_std" for n in descriptor_names)
        + (SILENCE_NAME,)
    )


def extract_llds(audio: dsp.AudioBuffer, config: LldConfig | None = None, utterance_id: str = "") -> LLDMatrix:
    config = config or LldConfig()
    frames = dsp.frame_signal(audio, config.win_ms, config.hop_ms)
    if len(frames) == 0:
        raise ValueError(f"utterance too short: {audio.samples.size} samples, window {frames.win_len}")
    x = frames.frames
    wanted = set(config.descriptors)
    cols: dict[str, np.ndarray] = {}
    if "rms_loudness" in wanted:
        cols["rms_loudness"] = dsp.frame_rms(x)
    if wanted & {"spectral_slope_0_500", "spectral_slope_500_1500", "spectral_flux", "mfcc1", "mfcc2", "mfcc3", "mfcc4"}:
        mags, bin_hz = dsp.magnitude_spectra(x, audio.sample_rate)
        if "spectral_slope_0_500" in wanted:
            cols["spectral_slope_0_500"] = dsp.spectral_slope_batch(mags, bin_hz, 0.0, 500.0)
        if "spectral_slope_500_1500" in wanted:
            cols["spectral_slope_500_1500"] = dsp.spectral_slope_batch(mags, bin_hz, 500.0, 1500.0)
        if "spectral_flux" in wanted:
            cols["spectral_flux"] = dsp.spectral_flux_series(mags)
        if wanted & {"mfcc1", "mfcc2", "mfcc3", "mfcc4"}:
            cc = dsp.mfcc_batch(mags, bin_hz, config.n_mels, 4)
            for i in range(4):
                cols[f"mfcc{i + 1}"] = cc[:, i]
    if "f0" in wanted:
        cols["f0"] = dsp.f0_batch(
            x, audio.sample_rate, config.f0_min, config.f0_max, config.voicing_threshold
        )
    values = np.column_stack([cols[d] for d in config.descriptors])
    return LLDMatrix(values, config.descriptors, utterance_id)


def silence_ratio(audio: dsp.AudioBuffer, cfg: SilenceConfig | None = None) -> float:
    """Fraction of frames whose RMS falls strictly below ``factor`` times the mean frame RMS."""
    cfg = cfg or SilenceConfig()
    frames = dsp.frame_signal(audio, cfg.win_ms, cfg.hop_ms)
    n_total = len(frames)
    if n_total == 0:
        raise ValueError("utterance too short for silence ratio")
    energies = dsp.frame_rms(frames.frames)
    threshold = cfg.factor * energies.mean()
    return int(np.count_nonzero(energies < threshold)) / n_total


def aggregate_hsf(llds: LLDMatrix, silence: float) -> HsfVector:
    values = llds.values
    if values.shape[0] == 0:
        raise ValueError(f"no frames to aggregate for utterance {llds.utterance_id!r}")
    if not 0.0 <= silence <= 1.0:
        raise ValueError(f"silence ratio {silence} outside [0, 1]")
    means = values.mean(axis=0)
    stds = values.std(axis=0)
    return HsfVector(
        np.concatenate([means, stds, [silence]]),
        llds.utterance_id,
        hsf_names(llds.descriptor_names),
    )


def extract_hsf(
    audio: dsp.AudioBuffer,
    utterance_id: str = "",
    lld_config: LldConfig | None = None,
    silence_config: SilenceConfig | None = None,
) -> HsfVector:
    llds = extract_llds(audio, lld_config, utterance_id)
    return aggregate_hsf(llds, silence_ratio(audio, silence_config))


# --- delimited-text files -----------------------------------------------------------


def _format(x: float) -> str:
    return repr(float(x))


def _parse_cell(cell: str, path: Path, line: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise ValueError(f"{path}: row {line}: column {column!r} is not a number: {cell!r}") from None
    if not math.isfinite(value):
        raise ValueError(f"{path}: row {line}: column {column!r} is missing or non-finite ({cell!r})")
    return value


def _read_table(path: str | Path) -> tuple[list[str], list[tuple[int, str, list[float]]]]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row") from None
        if len(header) < 1:
            raise ValueError(f"{path}: header row is empty")
        names = [h.strip() for h in header[1:]]
        rows = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: row {line}: expected {len(header)} cells, got {len(row)}")
            values = [_parse_cell(c.strip(), path, line, names[i]) for i, c in enumerate(row[1:])]
            rows.append((line, row[0].strip(), values))
    return names, rows


def ingest_lld_table(path: str | Path, expected_names: Iterable[str] | None = None) -> dict[str, LLDMatrix]:
    """Read externally extracted LLDs, one row per frame, keyed by the leading utterance-id column.

    Rows for the same utterance keep their file order. Returns matrices in first-seen order.
    """
    names, rows = _read_table(path)
    if expected_names is not None:
        missing = [n for n in expected_names if n not in names]
        if missing:
            raise ValueError(f"{path}: header lacks descriptors {missing}")
    grouped: dict[str, list[list[float]]] = {}
    for _, uid, values in rows:
        grouped.setdefault(uid, []).append(values)
    return {uid: LLDMatrix(np.array(vals), tuple(names), uid) for uid, vals in grouped.items()}


def write_feature_cache(vectors: Sequence[HsfVector], path: str | Path, names: Sequence[str] | None = None) -> None:
    lengths = {v.values.size for v in vectors}
    if len(lengths) > 1:
        raise ValueError(f"feature vectors differ in length: {sorted(lengths)}")
    if names is None:
        if vectors and vectors[0].names:
            names = vectors[0].names
        else:
            names = [f"f{i}" for i in range(lengths.pop() if lengths else 0)]
    if vectors and len(names) != vectors[0].values.size:
        raise ValueError("feature name count does not match vector length")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["utterance_id", *names])
        for v in vectors:
            writer.writerow([v.utterance_id, *map(_format, v.values)])


def read_feature_cache(path: str | Path) -> list[HsfVector]:
    names, rows = _read_table(path)
    seen = set()
    out = []
    for line, uid, values in rows:
        if uid in seen:
            raise ValueError(f"{path}: row {line}: duplicate utterance id {uid!r}")
        seen.add(uid)
        out.append(HsfVector(np.array(values), uid, tuple(names)))
    return out
