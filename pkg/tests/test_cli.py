import json

import pytest

from sermlp import data, features, nn
from sermlp.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--n", "40", "--sessions", "4", "--seed", "5", "--out", str(root / "corpus")]) == 0
    return root


def test_pipeline(workspace, capsys):
    root = workspace
    manifest = str(root / "corpus" / "manifest.csv")
    assert main(["extract", "--manifest", manifest, "--out", str(root / "f.csv"), "--workers", "2"]) == 0
    vecs = features.read_feature_cache(root / "f.csv")
    assert len(vecs) == 40 and vecs[0].values.size == 19

    assert main(["split", "--manifest", manifest, "--mode", "sd", "--test-count", "8", "--seed", "1",
                 "--out", str(root / "split.json")]) == 0
    assert data.load_partition(root / "split.json").sizes() == (25, 7, 8)

    assert main(["train", "--features", str(root / "f.csv"), "--split", str(root / "split.json"),
                 "--manifest", manifest, "--loss", "ccc", "--epochs", "5", "--batch", "10",
                 "--hidden", "16,8", "--seed", "2", "--out", str(root / "m.ckpt")]) == 0
    ckpt = nn.load_checkpoint(root / "m.ckpt")
    assert ckpt.model.hidden_sizes == (16, 8)
    assert ckpt.meta["train_config"]["loss_kind"] == "ccc_multitask"

    capsys.readouterr()
    assert main(["evaluate", "--model", str(root / "m.ckpt"), "--features", str(root / "f.csv"),
                 "--split", str(root / "split.json"), "--manifest", manifest, "--out", str(root / "r.txt")]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].split() == ["Method", "V", "A", "D", "Mean"]
    assert (root / "r.csv").exists()
    assert json.loads((root / "r.json").read_text())["sizes"] == [25, 7, 8]


def test_loso_split(workspace):
    manifest = str(workspace / "corpus" / "manifest.csv")
    assert main(["split", "--manifest", manifest, "--mode", "loso", "--holdout-session", "4",
                 "--out", str(workspace / "loso.json")]) == 0
    part = data.load_partition(workspace / "loso.json")
    assert part.sizes() == (24, 6, 10)


def test_run_config(workspace, capsys):
    cfg = workspace / "exp.cfg"
    cfg.write_text("[experiment]\nname = cli\nmanifests = corpus/manifest.csv\ntest_counts = 8\n"
                   "hidden_sizes = 8\nmax_epochs = 3\nbatch_size = 10\nout_dir = runs/a\n")
    capsys.readouterr()
    assert main(["run", "--config", str(cfg), "--out-dir", str(workspace / "runs" / "b")]) == 0
    body = json.loads(capsys.readouterr().out)
    assert body["name"] == "cli" and body["epochs"] == 3
    assert (workspace / "runs" / "b" / "report.txt").exists()
    assert not (workspace / "runs" / "a").exists()


def test_errors_return_nonzero(tmp_path, capsys):
    assert main(["split", "--manifest", str(tmp_path / "nope.csv"), "--mode", "sd", "--test-count", "3",
                 "--out", str(tmp_path / "s.json")]) == 1
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["split", "--manifest", "m.csv", "--mode", "sd", "--out", "s.json"])
