import csv
import json

import numpy as np
import pytest

from tgclust import io
from tgclust.cli import EVAL_COLUMNS, main
from tgclust.model import LOG_COLUMNS


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def data(tmp_path):
    assert main(["gen", "--nodes", "40", "--clusters", "2", "--interactions", "1500",
                 "--out", str(tmp_path / "d")]) == 0
    return tmp_path / "d"


def test_pipeline(tmp_path, data):
    e, lab = str(data / "edges.txt"), str(data / "labels.txt")
    assert main(["pretrain", "--edges", e, "--dim", "16", "--out", str(tmp_path / "f.txt")]) == 0
    assert main(["train", "--edges", e, "--labels", lab, "--features", str(tmp_path / "f.txt"),
                 "--modules", "x,d,c,b,s", "--epochs", "2", "--out", str(tmp_path / "z.txt"),
                 "--log", str(tmp_path / "log.csv"), "--report", str(tmp_path / "r.json")]) == 0
    log = rows(tmp_path / "log.csv")
    assert list(log[0]) == list(LOG_COLUMNS)
    assert len(LOG_COLUMNS) - 3 == 6  # L_model plus five module columns
    assert json.loads((tmp_path / "r.json").read_text())["config"]["modules"] == ["x", "d", "c", "b", "s"]
    assert main(["eval", "--embeddings", str(tmp_path / "z.txt"), "--labels", lab,
                 "--dataset", "synth", "--out", str(tmp_path / "m.csv")]) == 0
    m = rows(tmp_path / "m.csv")
    assert list(m[0]) == list(EVAL_COLUMNS) and m[0]["seed_count"] == "5"


def test_eval_one_hot_labels(tmp_path, capsys):
    labels = np.repeat(np.arange(3), 4)
    io.write_labels(io.NodeLabeling(labels, 3), tmp_path / "l.txt")
    io.write_features(np.eye(3)[labels], tmp_path / "z.txt")
    assert main(["eval", "--embeddings", str(tmp_path / "z.txt"), "--labels", str(tmp_path / "l.txt")]) == 0
    out = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert [float(out[0][k]) for k in ("acc", "nmi", "ari", "f1")] == [1.0, 1.0, 1.0, 1.0]


def test_config_file_and_override(tmp_path, data):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochs": 1, "feature_kind": "random", "dim": 4, "edges": str(data / "edges.txt")}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "z.txt"),
                 "--log", str(tmp_path / "log.csv")]) == 0
    assert {r["epoch"] for r in rows(tmp_path / "log.csv")} == {"0"}
    assert main(["train", "--config", str(cfg), "--epochs", "2", "--out", str(tmp_path / "z.txt"),
                 "--log", str(tmp_path / "log.csv")]) == 0
    assert {r["epoch"] for r in rows(tmp_path / "log.csv")} == {"0", "1"}
    assert io.parse_features(tmp_path / "z.txt").shape == (40, 4)


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"epochz": 1}')
    assert main(["train", "--config", str(cfg)]) == 2
    assert "epochz" in capsys.readouterr().err


def test_errors_have_context(tmp_path, capsys):
    bad = tmp_path / "e.txt"
    bad.write_text("0 1 1\n0 x 2\n")
    assert main(["pretrain", "--edges", str(bad), "--out", str(tmp_path / "f")]) == 1
    assert "e.txt:2" in capsys.readouterr().err
    assert main(["train"]) == 1  # no --out


def test_sweep_and_ablate(tmp_path, data):
    e, lab = str(data / "edges.txt"), str(data / "labels.txt")
    assert main(["sweep", "--edges", e, "--feature-kind", "random", "--dim", "4",
                 "--batch-sizes", "8,512", "--out", str(tmp_path / "s.csv")]) == 0
    assert [r["batch_size"] for r in rows(tmp_path / "s.csv")] == ["8", "512"]
    assert main(["ablate", "--edges", e, "--labels", lab, "--feature-kind", "random", "--dim", "4",
                 "--epochs", "1", "--module-sets", "base;x,d", "--seeds", "0,1",
                 "--out", str(tmp_path / "a.csv")]) == 0
    assert [r["modules"] for r in rows(tmp_path / "a.csv")] == ["BASE", "x,d"]
