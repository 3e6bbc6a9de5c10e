"""Manifests, label normalization, scalers and partitioning protocols."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CORPORA = ("IEMOCAP", "IMPROV", "SYNTH")
MANIFEST_COLUMNS = ("utterance_id", "corpus", "session", "speaker", "audio_path", "valence", "arousal", "dominance")
LABEL_MIN, LABEL_MAX = 1.0, 5.0


@dataclass(frozen=True)
class UtteranceRecord:
    utterance_id: str
    corpus: str
    session: int
    speaker: str
    audio_path: str
    labels_raw: tuple[float, float, float]

    def __post_init__(self):
        if self.corpus not in CORPORA:
            raise ValueError(f"{self.utterance_id}: unknown corpus {self.corpus!r}")
        if int(self.session) < 1:
            raise ValueError(f"{self.utterance_id}: session must be >= 1, got {self.session}")
        labels = tuple(float(v) for v in self.labels_raw)
        if len(labels) != 3:
            raise ValueError(f"{self.utterance_id}: expected 3 labels")
        for v in labels:
            if not LABEL_MIN <= v <= LABEL_MAX:
                raise ValueError(f"{self.utterance_id}: label {v} outside [1, 5]")
        object.__setattr__(self, "labels_raw", labels)
        object.__setattr__(self, "session", int(self.session))


@dataclass(frozen=True)
class Manifest:
    records: tuple[UtteranceRecord, ...]

    def __post_init__(self):
        records = tuple(sorted(self.records, key=lambda r: r.utterance_id))
        dupes = [uid for uid, n in Counter(r.utterance_id for r in records).items() if n > 1]
        if dupes:
            raise ValueError(f"duplicate utterance ids: {dupes[:5]}")
        object.__setattr__(self, "records", records)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.utterance_id for r in self.records)

    def by_id(self) -> dict[str, UtteranceRecord]:
        return {r.utterance_id: r for r in self.records}

    def session_counts(self) -> dict[int, int]:
        return dict(sorted(Counter(r.session for r in self.records).items()))

    def labels(self, ids: Sequence[str] | None = None) -> np.ndarray:
        """Raw [1, 5] labels as an (n, 3) array, in manifest order or in the order of ``ids``."""
        if ids is None:
            return np.array([r.labels_raw for r in self.records]).reshape(-1, 3)
        table = self.by_id()
        return np.array([table[i].labels_raw for i in ids]).reshape(-1, 3)


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    records = []
    seen: dict[str, int] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_COLUMNS:
            raise ValueError(f"{path}: header must be {','.join(MANIFEST_COLUMNS)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise ValueError(f"{path}: row {line}: expected {len(MANIFEST_COLUMNS)} cells, got {len(row)}")
            uid = row[0].strip()
            if uid in seen:
                raise ValueError(f"{path}: row {line}: duplicate utterance id {uid!r} (first at row {seen[uid]})")
            seen[uid] = line
            try:
                rec = UtteranceRecord(
                    uid, row[1].strip(), int(row[2]), row[3].strip(), row[4].strip(),
                    (float(row[5]), float(row[6]), float(row[7])),
                )
            except ValueError as exc:
                raise ValueError(f"{path}: row {line}: {exc}") from None
            records.append(rec)
    return Manifest(tuple(records))


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for r in manifest.records:
            writer.writerow([r.utterance_id, r.corpus, r.session, r.speaker, r.audio_path, *map(repr, r.labels_raw)])


def normalize_labels(raw) -> np.ndarray:
    """Map [1, 5] ratings to [-1, 1] via (x - 3) / 2."""
    x = np.asarray(raw, dtype=np.float64)
    if np.any(x < LABEL_MIN) or np.any(x > LABEL_MAX) or not np.all(np.isfinite(x)):
        raise ValueError("labels must lie in [1, 5]")
    return (x - 3.0) / 2.0


def denormalize_labels(norm) -> np.ndarray:
    return 2.0 * np.asarray(norm, dtype=np.float64) + 3.0


# --- scalers -------------------------------------------------------------------------

_DEGENERATE = 1e-12


@dataclass(frozen=True)
class Scaler:
    kind: str  # "zscore" or "minmax"
    offset: np.ndarray  # mean or min
    scale: np.ndarray  # std or range, degenerate dims replaced by 1
    fitted_on: tuple[str, ...] = field(default=(), compare=False)

    @property
    def dim(self) -> int:
        return self.offset.size


def fit_scaler(kind: str, matrix, ids: Sequence[str] = ()) -> Scaler:
    """Fit per-column statistics. ``ids`` records which rows were used, for provenance checks."""
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("scaler needs a non-empty 2-D training matrix")
    if kind == "zscore":
        offset, scale = x.mean(axis=0), x.std(axis=0)
    elif kind == "minmax":
        offset = x.min(axis=0)
        scale = x.max(axis=0) - offset
    else:
        raise ValueError(f"unknown scaler kind {kind!r}")
    scale = np.where(scale < _DEGENERATE, 1.0, scale)
    return Scaler(kind, offset, scale, tuple(ids))


def _check_dim(scaler: Scaler, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != scaler.dim:
        raise ValueError(f"scaler fitted on {scaler.dim} columns, got shape {x.shape}")
    return x


def apply_scaler(scaler: Scaler, matrix) -> np.ndarray:
    return (_check_dim(scaler, matrix) - scaler.offset) / scaler.scale


def invert_scaler(scaler: Scaler, matrix) -> np.ndarray:
    return _check_dim(scaler, matrix) * scaler.scale + scaler.offset


# --- partitions ----------------------------------------------------------------------


@dataclass(frozen=True)
class Partition:
    train: tuple[str, ...]
    dev: tuple[str, ...]
    test: tuple[str, ...]

    def __post_init__(self):
        for name in ("train", "dev", "test"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        a, b, c = set(self.train), set(self.dev), set(self.test)
        if len(a) + len(b) + len(c) != len(self.train) + len(self.dev) + len(self.test):
            raise ValueError("partition contains repeated ids")
        if a & b or a & c or b & c:
            raise ValueError("partition subsets overlap")

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.dev), len(self.test)

    def all_ids(self) -> set[str]:
        return set(self.train) | set(self.dev) | set(self.test)

    def to_json(self) -> dict:
        return {"train": list(self.train), "dev": list(self.dev), "test": list(self.test)}

    @classmethod
    def from_json(cls, obj: dict) -> "Partition":
        return cls(obj["train"], obj["dev"], obj["test"])


@dataclass(frozen=True)
class SplitSpec:
    mode: str  # "SD" or "LOSO"
    test_count: int | None = None
    holdout_session: int | None = None
    dev_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        mode = self.mode.upper()
        object.__setattr__(self, "mode", mode)
        if mode not in ("SD", "LOSO"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if not 0.0 < self.dev_fraction < 1.0:
            raise ValueError(f"dev_fraction must be in (0, 1), got {self.dev_fraction}")
        if mode == "SD" and self.test_count is None:
            raise ValueError("SD split needs test_count")
        if mode == "LOSO" and self.holdout_session is None:
            raise ValueError("LOSO split needs holdout_session")


def dev_count(n: int, dev_fraction: float) -> int:
    # Rounded up, with slack for float error (0.2 * 6570 must give 1314, not 1315).
    return min(n, math.ceil(dev_fraction * n - 1e-9))


def _carve_dev(ids: Sequence[str], dev_fraction: float, rng: np.random.Generator) -> tuple[list[str], list[str]]:
    order = [ids[i] for i in rng.permutation(len(ids))]
    n_dev = dev_count(len(order), dev_fraction)
    return order[: len(order) - n_dev], order[len(order) - n_dev :]


def split_sd(manifest: Manifest, test_count: int, dev_fraction: float = 0.2, seed: int = 0) -> Partition:
    """Speaker-dependent split: seeded shuffle, last ``test_count`` ids to test, dev carved from the rest."""
    n = len(manifest)
    if not 0 < test_count < n:
        raise ValueError(f"test_count {test_count} infeasible for {n} records")
    if not 0.0 < dev_fraction < 1.0:
        raise ValueError(f"dev_fraction must be in (0, 1), got {dev_fraction}")
    rng = np.random.default_rng(seed)
    ids = manifest.ids
    order = [ids[i] for i in rng.permutation(n)]
    rest, test = order[: n - test_count], order[n - test_count :]
    n_dev = dev_count(len(rest), dev_fraction)
    if n_dev >= len(rest):
        raise ValueError("dev_fraction leaves no training records")
    return Partition(rest[: len(rest) - n_dev], rest[len(rest) - n_dev :], test)


def split_loso(manifest: Manifest, holdout_session: int, dev_fraction: float = 0.2, seed: int = 0) -> Partition:
    """Leave-one-session-out: the held-out session is the test set; dev carved from the others."""
    if not 0.0 < dev_fraction < 1.0:
        raise ValueError(f"dev_fraction must be in (0, 1), got {dev_fraction}")
    sessions = manifest.session_counts()
    if holdout_session not in sessions:
        raise ValueError(f"session {holdout_session} not in manifest (sessions {sorted(sessions)})")
    test = [r.utterance_id for r in manifest.records if r.session == holdout_session]
    rest = [r.utterance_id for r in manifest.records if r.session != holdout_session]
    if not rest:
        raise ValueError(f"holding out session {holdout_session} leaves no training records")
    train, dev = _carve_dev(rest, dev_fraction, np.random.default_rng(seed))
    if not train:
        raise ValueError("dev_fraction leaves no training records")
    return Partition(train, dev, test)


def make_split(manifest: Manifest, spec: SplitSpec) -> Partition:
    if spec.mode == "SD":
        return split_sd(manifest, spec.test_count, spec.dev_fraction, spec.seed)
    return split_loso(manifest, spec.holdout_session, spec.dev_fraction, spec.seed)


def save_partition(partition: Partition, path: str | Path, **meta) -> None:
    obj = {**meta, **partition.to_json()}
    Path(path).write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def load_partition(path: str | Path) -> Partition:
    return Partition.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# --- feature-bearing partitions and corpus mixing ------------------------------------


@dataclass
class SplitData:
    """A partition together with per-utterance features, raw labels and corpus tags."""

    partition: Partition
    features: dict[str, np.ndarray]
    labels: dict[str, np.ndarray]
    corpus: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        missing = self.partition.all_ids() - self.features.keys()
        if missing:
            raise ValueError(f"{len(missing)} partition ids lack features, e.g. {sorted(missing)[:3]}")
        missing = self.partition.all_ids() - self.labels.keys()
        if missing:
            raise ValueError(f"{len(missing)} partition ids lack labels, e.g. {sorted(missing)[:3]}")
        dims = {np.asarray(self.features[i]).size for i in self.partition.all_ids()}
        if len(dims) > 1:
            raise ValueError(f"inconsistent feature dimensionality {sorted(dims)}")

    @property
    def feature_dim(self) -> int | None:
        ids = self.partition.train or self.partition.dev or self.partition.test
        return np.asarray(self.features[ids[0]]).size if ids else None

    def arrays(self, subset: str) -> tuple[np.ndarray, np.ndarray]:
        ids = getattr(self.partition, subset)
        dim = self.feature_dim or 0
        x = np.array([self.features[i] for i in ids], dtype=np.float64).reshape(len(ids), dim)
        y = np.array([self.labels[i] for i in ids], dtype=np.float64).reshape(len(ids), 3)
        return x, y

    @classmethod
    def from_manifest(cls, manifest: Manifest, partition: Partition, features: dict[str, np.ndarray]) -> "SplitData":
        table = manifest.by_id()
        ids = partition.all_ids()
        return cls(
            partition,
            {i: np.asarray(features[i], dtype=np.float64) for i in ids if i in features},
            {i: np.asarray(table[i].labels_raw) for i in ids},
            {i: table[i].corpus for i in ids},
        )


def mix_corpora(a: SplitData, b: SplitData) -> SplitData:
    """Set-wise concatenation: train with train, dev with dev, test with test.

    Scalers are fitted downstream on the mixed training set.
    """
    if a.feature_dim is not None and b.feature_dim is not None and a.feature_dim != b.feature_dim:
        raise ValueError(f"feature dimensionality mismatch: {a.feature_dim} vs {b.feature_dim}")
    clash = a.partition.all_ids() & b.partition.all_ids()
    if clash:
        raise ValueError(f"utterance ids collide across corpora, e.g. {sorted(clash)[:3]}")
    part = Partition(
        a.partition.train + b.partition.train,
        a.partition.dev + b.partition.dev,
        a.partition.test + b.partition.test,
    )
    return SplitData(
        part,
        {**a.features, **b.features},
        {**a.labels, **b.labels},
        {**a.corpus, **b.corpus},
    )


def session_sizes_manifest(corpus: str, session_sizes: Iterable[int], prefix: str | None = None) -> Manifest:
    """Audio-free manifest with the given number of utterances per session (labels at midpoint)."""
    prefix = prefix or corpus
    records = []
    for s, size in enumerate(session_sizes, start=1):
        for k in range(size):
            records.append(UtteranceRecord(f"{prefix}_S{s:02d}_{k:05d}", corpus, s, f"{prefix}{s}", "", (3.0, 3.0, 3.0)))
    return Manifest(tuple(records))
