import json
import subprocess
import sys

import numpy as np
import pytest

from nemf.cli import format_explanation, main
from nemf.dataset import load_dataset
from nemf.explainability import ExplainConfig

FAST = ["--factors", "4", "--lr", "0.01", "--epochs", "2"]


def run(argv):
    return main([str(a) for a in argv])


def test_ingest(ml_dir, tmp_path, capsys):
    assert run(["ingest", "--dataset", ml_dir, "--output-dir", tmp_path]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["users"] == 25
    assert (tmp_path / "config.json").exists()
    assert "ratings" in capsys.readouterr().out


def test_output_dir_from_environment(ml_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("NEMF_OUTPUT_DIR", str(tmp_path / "env"))
    assert run(["ingest", "--dataset", ml_dir]) == 0
    assert (tmp_path / "env" / "summary.json").exists()


def test_train_recommend_explain(ml_dir, tmp_path, capsys):
    out = tmp_path / "t"
    assert run(["train", "--dataset", ml_dir, "--output-dir", out, "--lam", "0.5", "--delta", "0.2", *FAST]) == 0
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["train"]["lam"] == 0.5 and cfg["train"]["beta"] == 0.02
    m, _ = load_dataset(ml_dir)
    uid = int(m.user_ids[0])
    rec = tmp_path / "r"
    assert run(["recommend", "--dataset", ml_dir, "--model", out / "model.npz", "--user", uid,
                "--output-dir", rec, "--reranker", "mmr"]) == 0
    lines = (rec / "recommendations.txt").read_text().splitlines()
    assert len(lines) == 10 and all(l.split()[0] == str(uid) for l in lines)
    iid = int(m.item_ids[0])
    assert run(["explain", "--dataset", ml_dir, "--user", uid, "--item", iid, "-k", 5,
                "--model", out / "model.npz"]) == 0
    text = capsys.readouterr().out
    assert "E = " in text and "predicted score" in text


def test_seed_reproducible(ml_dir, tmp_path):
    for name in ("a", "b"):
        assert run(["train", "--dataset", ml_dir, "--output-dir", tmp_path / name, "--seed", 9, *FAST]) == 0
    a, b = np.load(tmp_path / "a" / "model.npz"), np.load(tmp_path / "b" / "model.npz")
    assert np.array_equal(a["P"], b["P"])


def test_explanation_text():
    cfg = ExplainConfig(k=33, p_tau=4)
    text = format_explanation(1, 2, {4: 10, 5: 23}, cfg, 33)
    assert "4*: 10 neighbours" in text and "E = 155" in text and "0.9394" in text
    text = format_explanation(1, 2, {1: 1, 2: 2, 3: 7, 4: 14, 5: 9}, ExplainConfig(k=33, p_tau=1), 33)
    assert "E = 127" in text
    text = format_explanation(1, 2, {}, cfg, 33)
    assert "no explanation available" in text and "E = 0" in text


def test_unknown_ids_fail(ml_dir, capsys):
    assert run(["explain", "--dataset", ml_dir, "--user", 999999, "--item", 1]) == 1
    assert "unknown user id" in capsys.readouterr().err


def test_missing_dataset_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as err:
        run(["evaluate", "--dataset", tmp_path / "nope"])
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        run(["train", "--bogus-flag"])
    assert err.value.code == 2


def test_evaluate_with_config(ml_dir, tmp_path, capsys):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text(f"dataset: {ml_dir}\ngrid: table4\ngrid_params: {{factors: 4, lr: 0.01, epochs: 2}}\n"
                   f"novelty: topic\nfolds: 3\n")
    out = tmp_path / "ev"
    # flags say 4 folds and distance novelty; the file wins
    assert run(["evaluate", "--config", cfg, "--output-dir", out, "--novelty", "distance"]) == 0
    rows = (out / "report.csv").read_text().splitlines()[1:]
    assert {r.split(",")[0] for r in rows} == {"MF", "MF+MMR", "NMF", "EMF-L2", "EMF-L1", "NEMF"}
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["folds"] == 3 and resolved["novelty"] == "topic"
    capsys.readouterr()
    assert run(["compare", out / "report.json", "--p-values"]) == 0
    assert "EMF-L1" in capsys.readouterr().out


def test_sweep_command(ml_dir, tmp_path):
    out = tmp_path / "sw"
    assert run(["sweep", "--dataset", ml_dir, "--param", "delta", "--values", "0,0.2,0.4,0.6,0.8,1.0",
                "--output-dir", out, *FAST]) == 0
    assert len((out / "sweep_delta.csv").read_text().splitlines()) == 7
    assert (out / "config.json").exists()
    assert run(["sweep", "--dataset", ml_dir, "--param", "both", "--values", "0.1:0.2,0.3:0.4",
                "--output-dir", out, *FAST]) == 0
    with pytest.raises(SystemExit):
        run(["sweep", "--dataset", ml_dir, "--param", "delta", "--values", "a,b", *FAST])


def test_bad_config_key(ml_dir, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("nonsense: 3\n")
    assert run(["train", "--dataset", ml_dir, "--config", cfg]) == 1


def test_console_entry_point(ml_dir):
    res = subprocess.run([sys.executable, "-m", "nemf.cli", "ingest", "--dataset", str(ml_dir / "missing")],
                         capture_output=True, text=True)
    assert res.returncode != 0 and "does not exist" in res.stderr
