"""Command-line entry point: ``sermlp {synth,extract,split,train,evaluate,run}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import data, features, harness, nn, synth

LOSS_ALIASES = {"mse": "mse_multitask", "ccc": "ccc_multitask"}


def _hidden(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def cmd_synth(args) -> int:
    manifest = synth.gen_synthetic_corpus(args.n, args.sessions, args.seed, args.out, args.prefix)
    print(f"wrote {len(manifest)} utterances to {Path(args.out) / synth.MANIFEST_FILE}")
    return 0


def cmd_extract(args) -> int:
    manifest = data.load_manifest(args.manifest)
    silence = features.SilenceConfig(factor=args.silence_factor)
    if args.llds == "native":
        vecs = harness.extract_manifest_features(manifest, args.manifest, silence, args.workers)
    elif args.llds.startswith("ingest:"):
        vecs = harness.ingest_manifest_features(manifest, args.manifest, args.llds[len("ingest:"):], silence)
    else:
        raise SystemExit(f"--llds must be 'native' or 'ingest:PATH', got {args.llds!r}")
    features.write_feature_cache(vecs, args.out)
    print(f"wrote {len(vecs)} feature vectors of length {vecs[0].values.size if vecs else 0} to {args.out}")
    return 0


def cmd_split(args) -> int:
    manifest = data.load_manifest(args.manifest)
    spec = data.SplitSpec(args.mode, args.test_count, args.holdout_session, args.dev_frac, args.seed)
    part = data.make_split(manifest, spec)
    data.save_partition(part, args.out, mode=spec.mode, seed=spec.seed,
                        test_count=spec.test_count, holdout_session=spec.holdout_session, dev_fraction=spec.dev_fraction)
    print("train/dev/test = {}/{}/{}".format(*part.sizes()))
    return 0


def _split_data(manifest_path, features_path, split_path) -> tuple[data.SplitData, tuple[str, ...]]:
    manifest = data.load_manifest(manifest_path)
    vecs = features.read_feature_cache(features_path)
    part = data.load_partition(split_path)
    table = {v.utterance_id: v.values for v in vecs}
    return data.SplitData.from_manifest(manifest, part, table), (vecs[0].names if vecs else ())


def cmd_train(args) -> int:
    split, names = _split_data(args.manifest, args.features, args.split)
    cfg = nn.TrainConfig(args.batch, args.epochs, args.patience, args.lr, LOSS_ALIASES[args.loss],
                         args.alpha, args.beta, args.seed)
    pipe = harness.fit_pipeline(split, cfg, args.hidden, args.activation, seed=args.seed)
    nn.save_checkpoint(args.out, nn.Checkpoint(pipe.model, pipe.feature_scaler, pipe.label_scaler, names,
                                               {"train_config": nn.train_config_dict(cfg)}))
    h = pipe.history
    print(f"trained {h.epochs} epochs, best epoch {h.best_epoch} (dev loss {h.best_dev_loss:.6f}) -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    ckpt = nn.load_checkpoint(args.model)
    split, names = _split_data(args.manifest, args.features, args.split)
    if ckpt.feature_names and tuple(names) != tuple(ckpt.feature_names):
        raise SystemExit("feature columns differ from those the model was trained on")
    if ckpt.feature_scaler is None or ckpt.label_scaler is None:
        raise SystemExit("checkpoint lacks the scalers needed for inference")
    pipe = harness.FittedPipeline(ckpt.model, nn.TrainHistory(), ckpt.feature_scaler, ckpt.label_scaler)
    triple = harness.evaluate_subset(pipe, split, "test")
    report = harness.Report.from_triple(args.name, args.scenario, triple, sizes=split.partition.sizes())
    harness.emit_report([report], args.out)
    Path(args.out).with_suffix(".json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(Path(args.out).read_text(encoding="utf-8"), end="")
    return 0


def cmd_run(args) -> int:
    cfg = harness.load_config(args.config)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    report = harness.run_experiment(cfg)
    print(json.dumps(report.body(), indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sermlp", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic labelled corpus")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--sessions", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--prefix", default="SYN", help="utterance id prefix")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("extract", help="compute per-utterance feature vectors")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--silence-factor", type=float, default=0.3)
    s.add_argument("--llds", default="native", help="'native' or 'ingest:PATH' (external LLD table)")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("split", help="partition a manifest into train/dev/test")
    s.add_argument("--manifest", required=True)
    s.add_argument("--mode", choices=["sd", "loso"], required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--test-count", type=int)
    g.add_argument("--holdout-session", type=int)
    s.add_argument("--dev-frac", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="train the MLP on a feature cache and split")
    s.add_argument("--features", required=True)
    s.add_argument("--split", required=True)
    s.add_argument("--manifest", required=True, help="source of the labels")
    s.add_argument("--loss", choices=sorted(LOSS_ALIASES), default="mse")
    s.add_argument("--alpha", type=float, default=1 / 3)
    s.add_argument("--beta", type=float, default=1 / 3)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--batch", type=int, default=200)
    s.add_argument("--epochs", type=int, default=180)
    s.add_argument("--patience", type=int, default=10)
    s.add_argument("--hidden", type=_hidden, default=nn.DEFAULT_HIDDEN)
    s.add_argument("--activation", choices=list(nn.ACTIVATIONS), default="relu")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="score a checkpoint on the test partition")
    s.add_argument("--model", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--split", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--name", default="MLP")
    s.add_argument("--scenario", default="")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("run", help="run a full experiment from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", help="override out_dir from the config")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, harness.StageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
