"""Experiment orchestration: features, splits, scaling, training, evaluation and result tables."""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import data, dsp, features, nn
from .objectives import EvalTriple, evaluate

log = logging.getLogger(__name__)

SCENARIOS = ("SD", "LOSO", "MIXED-SD", "MIXED-LOSO")
FEATURE_SOURCES = ("native", "ingest", "cache")
MEAN_TOLERANCE = 5e-4


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    scenario: str = "SD"
    manifests: tuple[str, ...] = ()
    feature_source: str = "native"
    feature_paths: tuple[str, ...] = ()  # one per manifest for ingest/cache
    test_counts: tuple[int, ...] = ()  # SD: one per manifest
    holdout_sessions: tuple[int, ...] = ()  # LOSO: one per manifest
    dev_fraction: float = 0.2
    train: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    silence: features.SilenceConfig = field(default_factory=features.SilenceConfig)
    hidden_sizes: tuple[int, ...] = nn.DEFAULT_HIDDEN
    activation: str = "relu"
    feature_scaler: str = "zscore"
    label_scaler: str = "minmax"
    scaler_scope: str = "global"  # or "per_corpus" (feature scaler only)
    out_dir: str = "runs/experiment"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        self.scenario = self.scenario.upper()
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if self.feature_source not in FEATURE_SOURCES:
            raise ValueError(f"feature_source must be one of {FEATURE_SOURCES}")
        self.manifests = tuple(str(m) for m in self.manifests)
        self.feature_paths = tuple(str(p) for p in self.feature_paths)
        self.test_counts = tuple(int(c) for c in self.test_counts)
        self.holdout_sessions = tuple(int(s) for s in self.holdout_sessions)
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        n_expected = 2 if self.scenario.startswith("MIXED") else 1
        if len(self.manifests) != n_expected:
            raise ValueError(f"scenario {self.scenario} needs {n_expected} manifest(s), got {len(self.manifests)}")
        if self.scenario.endswith("SD") and len(self.test_counts) != n_expected:
            raise ValueError(f"scenario {self.scenario} needs {n_expected} test count(s)")
        if self.scenario.endswith("LOSO") and len(self.holdout_sessions) != n_expected:
            raise ValueError(f"scenario {self.scenario} needs {n_expected} holdout session(s)")
        if self.feature_source != "native" and len(self.feature_paths) != n_expected:
            raise ValueError(f"feature source {self.feature_source} needs {n_expected} feature path(s)")
        if self.scaler_scope not in ("global", "per_corpus"):
            raise ValueError("scaler_scope must be 'global' or 'per_corpus'")
        self.train.seed = self.seed

    def resolved(self) -> dict:
        d = asdict(self)
        for key in ("out_dir", "workers"):  # do not affect results
            d.pop(key)
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


_LIST_KEYS = {"manifests": str, "feature_paths": str, "test_counts": int, "holdout_sessions": int, "hidden_sizes": int}
_TRAIN_KEYS = {f.name: f.type for f in fields(nn.TrainConfig)}
_SILENCE_KEYS = {"silence_factor": "factor", "silence_win_ms": "win_ms", "silence_hop_ms": "hop_ms"}


def load_config(path: str | Path) -> ExperimentConfig:
    """Read an INI-style ``key = value`` file with a single ``[experiment]`` section.

    List values are comma-separated. Training keys (batch_size, max_epochs, patience,
    learning_rate, loss_kind, alpha, beta) and silence_* keys go in the same section.
    Relative paths resolve against the config file's directory.
    """
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not parser.read(path, encoding="utf-8"):
        raise FileNotFoundError(path)
    if "experiment" not in parser:
        raise ValueError(f"{path}: missing [experiment] section")
    sec = parser["experiment"]
    base = path.parent
    kw, train_kw, silence_kw = {}, {}, {}
    for key, raw in sec.items():
        raw = raw.strip().strip('"').strip("'")
        if key in _LIST_KEYS:
            items = [v.strip() for v in raw.split(",") if v.strip()]
            cast = _LIST_KEYS[key]
            if key in ("manifests", "feature_paths"):
                items = [str(base / v) if not Path(v).is_absolute() else v for v in items]
            kw[key] = tuple(cast(v) for v in items)
        elif key in _TRAIN_KEYS and key != "seed":
            train_kw[key] = raw if key == "loss_kind" else (float(raw) if key in ("learning_rate", "alpha", "beta") else int(raw))
        elif key in _SILENCE_KEYS:
            silence_kw[_SILENCE_KEYS[key]] = float(raw)
        elif key in ("dev_fraction",):
            kw[key] = float(raw)
        elif key in ("seed", "workers"):
            kw[key] = int(raw)
        elif key == "out_dir":
            kw[key] = str(base / raw) if not Path(raw).is_absolute() else raw
        elif key in ("name", "scenario", "feature_source", "activation", "feature_scaler", "label_scaler", "scaler_scope"):
            kw[key] = raw
        else:
            raise ValueError(f"{path}: unknown key {key!r}")
    return ExperimentConfig(train=nn.TrainConfig(**train_kw), silence=features.SilenceConfig(**silence_kw), **kw)


@dataclass
class Report:
    name: str
    scenario: str
    ccc_v: float
    ccc_a: float
    ccc_d: float
    epochs: int = 0
    best_epoch: int = 0
    sizes: tuple[int, int, int] = (0, 0, 0)
    fingerprint: str = ""
    wall_seconds: float = 0.0

    @classmethod
    def from_triple(cls, name: str, scenario: str, triple: EvalTriple, **kw) -> "Report":
        return cls(name, scenario, triple.ccc_v, triple.ccc_a, triple.ccc_d, **kw)

    @property
    def mean(self) -> float:
        return (self.ccc_v + self.ccc_a + self.ccc_d) / 3.0

    @property
    def triple(self) -> EvalTriple:
        return EvalTriple(self.ccc_v, self.ccc_a, self.ccc_d)

    def body(self) -> dict:
        """Everything except timing; identical configs and seeds give identical bodies."""
        d = asdict(self)
        d.pop("wall_seconds")
        d["sizes"] = list(self.sizes)
        d["mean"] = self.mean
        return d

    def to_json(self) -> str:
        return json.dumps({**self.body(), "wall_seconds": self.wall_seconds}, indent=1, sort_keys=True)


def format_row(report: Report, mean: float | None = None) -> str:
    m = report.mean if mean is None else mean
    return f"{report.ccc_v:.3f}  {report.ccc_a:.3f}  {report.ccc_d:.3f}  {m:.3f}"


def emit_report(reports: Sequence[Report], path: str | Path, stored_means: Sequence[float] | None = None) -> tuple[Path, Path]:
    """Write an aligned text table at ``path`` and a CSV next to it (same stem, ``.csv``).

    ``stored_means`` lets callers pass means recorded elsewhere; each must agree with the mean
    recomputed from the components to within 5e-4.
    """
    if not reports:
        raise ValueError("no reports to emit")
    path = Path(path)
    means = []
    for i, r in enumerate(reports):
        recomputed = (r.ccc_v + r.ccc_a + r.ccc_d) / 3.0
        m = recomputed if stored_means is None else float(stored_means[i])
        if abs(m - recomputed) > MEAN_TOLERANCE:
            raise ValueError(f"report {r.name!r}: mean {m:.4f} disagrees with components ({recomputed:.4f})")
        means.append(m)
    labels = [f"{r.name} ({r.scenario})" for r in reports]
    width = max(len("Method"), *(len(s) for s in labels))
    lines = [f"{'Method':<{width}}  {'V':>5}  {'A':>5}  {'D':>5}  {'Mean':>5}"]
    lines += [f"{lab:<{width}}  {format_row(r, m)}" for lab, r, m in zip(labels, reports, means)]
    csv_path = path.with_suffix(".csv")
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with csv_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["method", "scenario", "CCC_V", "CCC_A", "CCC_D", "Mean"])
            for r, m in zip(reports, means):
                writer.writerow([r.name, r.scenario, f"{r.ccc_v:.3f}", f"{r.ccc_a:.3f}", f"{r.ccc_d:.3f}", f"{m:.3f}"])
    except OSError as exc:
        raise OSError(f"cannot write report table to {path}: {exc}") from exc
    return path, csv_path


# --- feature resolution ----------------------------------------------------------------


def resolve_audio_path(manifest_path: str | Path, audio_path: str) -> Path:
    p = Path(audio_path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


def _native_one(job):
    uid, wav_path, silence_cfg = job
    audio = dsp.read_wav(wav_path)
    return features.extract_hsf(audio, uid, silence_config=silence_cfg)


def extract_manifest_features(
    manifest: data.Manifest,
    manifest_path: str | Path,
    silence_cfg: features.SilenceConfig | None = None,
    workers: int = 1,
) -> list[features.HsfVector]:
    jobs = [(r.utterance_id, resolve_audio_path(manifest_path, r.audio_path), silence_cfg) for r in manifest.records]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_native_one, jobs, chunksize=16))
    return [_native_one(j) for j in jobs]


def ingest_manifest_features(
    manifest: data.Manifest,
    manifest_path: str | Path,
    lld_path: str | Path,
    silence_cfg: features.SilenceConfig | None = None,
) -> list[features.HsfVector]:
    """HSFs from an external LLD table; the silence ratio still comes from each utterance's audio."""
    tables = features.ingest_lld_table(lld_path)
    out = []
    for r in manifest.records:
        if r.utterance_id not in tables:
            raise ValueError(f"{lld_path}: no LLD rows for utterance {r.utterance_id!r}")
        audio = dsp.read_wav(resolve_audio_path(manifest_path, r.audio_path))
        out.append(features.aggregate_hsf(tables[r.utterance_id], features.silence_ratio(audio, silence_cfg)))
    return out


def load_features(cfg: ExperimentConfig, manifest: data.Manifest, index: int) -> tuple[dict[str, np.ndarray], tuple[str, ...]]:
    mpath = cfg.manifests[index]
    if cfg.feature_source == "native":
        vecs = extract_manifest_features(manifest, mpath, cfg.silence, cfg.workers)
    elif cfg.feature_source == "ingest":
        vecs = ingest_manifest_features(manifest, mpath, cfg.feature_paths[index], cfg.silence)
    else:
        vecs = features.read_feature_cache(cfg.feature_paths[index])
    table = {v.utterance_id: v.values for v in vecs}
    missing = [i for i in manifest.ids if i not in table]
    if missing:
        raise ValueError(f"features missing for {len(missing)} utterances, e.g. {missing[:3]}")
    names = vecs[0].names if vecs else ()
    return table, names


# --- scaling, training, evaluation -------------------------------------------------------


@dataclass
class FittedPipeline:
    model: nn.MlpModel
    history: nn.TrainHistory
    feature_scaler: data.Scaler | None
    label_scaler: data.Scaler
    corpus_scalers: dict[str, data.Scaler] = field(default_factory=dict)


def _assert_fitted_on_train(scaler: data.Scaler, train_ids: Sequence[str]) -> None:
    if set(scaler.fitted_on) - set(train_ids):
        raise RuntimeError("scaler was fitted on rows outside the training partition")


def _scale_features(split: data.SplitData, subset: str, pipe: FittedPipeline) -> np.ndarray:
    x, _ = split.arrays(subset)
    if pipe.feature_scaler is not None:
        return data.apply_scaler(pipe.feature_scaler, x)
    ids = getattr(split.partition, subset)
    out = np.empty_like(x)
    for row, uid in enumerate(ids):
        out[row] = data.apply_scaler(pipe.corpus_scalers[split.corpus[uid]], x[row : row + 1])[0]
    return out


def fit_pipeline(
    split: data.SplitData,
    train_cfg: nn.TrainConfig,
    hidden_sizes: Sequence[int] = nn.DEFAULT_HIDDEN,
    activation: str = "relu",
    feature_scaler: str = "zscore",
    label_scaler: str = "minmax",
    scaler_scope: str = "global",
    seed: int = 0,
) -> FittedPipeline:
    """Fit scalers on the training rows only, then train the MLP with dev-based early stopping."""
    part = split.partition
    x_tr, y_tr = split.arrays("train")
    lab = data.fit_scaler(label_scaler, data.normalize_labels(y_tr), part.train)
    _assert_fitted_on_train(lab, part.train)
    feat, per_corpus = None, {}
    if scaler_scope == "global":
        feat = data.fit_scaler(feature_scaler, x_tr, part.train)
        _assert_fitted_on_train(feat, part.train)
    else:
        by_corpus: dict[str, list[int]] = {}
        for row, uid in enumerate(part.train):
            by_corpus.setdefault(split.corpus[uid], []).append(row)
        for corpus, rows in by_corpus.items():
            ids = [part.train[r] for r in rows]
            per_corpus[corpus] = data.fit_scaler(feature_scaler, x_tr[rows], ids)
            _assert_fitted_on_train(per_corpus[corpus], part.train)
    pipe = FittedPipeline(None, None, feat, lab, per_corpus)

    def scaled(subset):
        _, y = split.arrays(subset)
        return _scale_features(split, subset, pipe), data.apply_scaler(lab, data.normalize_labels(y))

    model = nn.init_model(split.feature_dim, hidden_sizes, activation, seed)
    pipe.model, pipe.history = nn.train(model, scaled("train"), scaled("dev"), train_cfg)
    return pipe


def predict_labels(pipe: FittedPipeline, split: data.SplitData, subset: str) -> np.ndarray:
    """Predictions mapped back to the [-1, 1] label space."""
    x = _scale_features(split, subset, pipe)
    return data.invert_scaler(pipe.label_scaler, nn.predict(pipe.model, x))


def evaluate_subset(pipe: FittedPipeline, split: data.SplitData, subset: str = "test") -> EvalTriple:
    _, y = split.arrays(subset)
    return evaluate(predict_labels(pipe, split, subset), data.normalize_labels(y))


# --- end-to-end -------------------------------------------------------------------------


def _build_split(cfg: ExperimentConfig, manifest: data.Manifest, index: int) -> data.Partition:
    if cfg.scenario.endswith("SD"):
        return data.split_sd(manifest, cfg.test_counts[index], cfg.dev_fraction, cfg.seed)
    return data.split_loso(manifest, cfg.holdout_sessions[index], cfg.dev_fraction, cfg.seed)


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def run_experiment(cfg: ExperimentConfig) -> Report:
    """Manifest -> features -> split -> scale -> train -> evaluate; writes report, table and checkpoint."""
    t0 = time.perf_counter()
    out_dir = Path(cfg.out_dir)
    created: list[Path] = []
    dir_existed = out_dir.exists()
    try:
        with _Stage("load"):
            manifests = [data.load_manifest(p) for p in cfg.manifests]
        with _Stage("features"):
            tables = [load_features(cfg, m, i) for i, m in enumerate(manifests)]
            names = tables[0][1]
        with _Stage("split"):
            splits = [
                data.SplitData.from_manifest(m, _build_split(cfg, m, i), tables[i][0])
                for i, m in enumerate(manifests)
            ]
            split = splits[0] if len(splits) == 1 else data.mix_corpora(splits[0], splits[1])
        with _Stage("train"):
            pipe = fit_pipeline(
                split, cfg.train, cfg.hidden_sizes, cfg.activation,
                cfg.feature_scaler, cfg.label_scaler, cfg.scaler_scope, cfg.seed,
            )
        with _Stage("evaluate"):
            triple = evaluate_subset(pipe, split, "test")
        report = Report.from_triple(
            cfg.name, cfg.scenario, triple,
            epochs=pipe.history.epochs, best_epoch=pipe.history.best_epoch,
            sizes=split.partition.sizes(), fingerprint=cfg.fingerprint(),
            wall_seconds=time.perf_counter() - t0,
        )
        with _Stage("report"):
            out_dir.mkdir(parents=True, exist_ok=True)
            targets = {k: out_dir / k for k in ("report.json", "report.txt", "report.csv", "partition.json", "model.ckpt")}
            created += list(targets.values())
            targets["report.json"].write_text(report.to_json() + "\n", encoding="utf-8")
            emit_report([report], targets["report.txt"])
            data.save_partition(split.partition, targets["partition.json"], scenario=cfg.scenario, seed=cfg.seed)
            nn.save_checkpoint(
                targets["model.ckpt"],
                nn.Checkpoint(pipe.model, pipe.feature_scaler, pipe.label_scaler, tuple(names),
                              {"fingerprint": report.fingerprint, "scaler_scope": cfg.scaler_scope}),
            )
        return report
    except BaseException:
        for p in created:
            p.unlink(missing_ok=True)
        if not dir_existed and out_dir.exists() and not any(out_dir.iterdir()):
            out_dir.rmdir()
        raise
