import csv
import json

import numpy as np
import pytest

from nemf.dataset import kfold_split, load_dataset
from nemf.errors import ConfigError
from nemf.explainability import ExplainConfig, build_user_style_E, normalize
from nemf.harness import (Cell, ExperimentSpec, compare_table, derive_seed, run_experiment,
                          select_tradeoff, sensitivity_sweep, table4_grid)
from nemf.metrics import METRICS
from nemf.neighborhood import build_graph
from nemf.novelty import build_N_matrix

FAST = dict(factors=4, lr=0.01, epochs=3)


def spec_for(path, **kw):
    kw.setdefault("cells", table4_grid(lam=0.5, delta=0.5, **FAST))
    return ExperimentSpec(str(path), **kw)


def test_table4_grid_layout():
    names = [c.name for c in table4_grid()]
    assert names == ["MF", "MF+MMR", "NMF", "EMF-L2", "EMF-L1", "NEMF"]
    g = {c.name: c for c in table4_grid(lam=0.3, delta=0.6, nemf=(0.1, 0.2), epochs=7)}
    assert g["NEMF"].config().lam == 0.1 and g["NEMF"].config().delta == 0.2
    assert g["EMF-L2"].config().norm == "L2" and g["NMF"].config().lam == 0
    assert g["MF+MMR"].reranker == "mmr" and g["MF"].config().epochs == 7


def test_experiment_outputs(ml_dir, tmp_path):
    spec = spec_for(ml_dir, output_dir=str(tmp_path / "out"), novelty="topic")
    rep = run_experiment(spec)
    assert rep.cells == [c.name for c in spec.cells]
    assert set(rep.p_values()) == set(rep.cells) - {"MF"}
    out = tmp_path / "out"
    data = json.loads((out / "report.json").read_text())
    assert data["means"]["MF"].keys() == set(METRICS)
    rows = list(csv.reader(open(out / "report.csv")))
    assert {r[0] for r in rows[1:]} == set(rep.cells)
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["cells"][0]["train"]["beta"] == 0.02  # defaults materialised
    assert len(list((out / "logs").glob("*.log"))) == 6 * 4
    table = compare_table(rep)
    assert table.count("\n") == 7 and "*" in table


def test_same_seed_same_report(ml_dir):
    a = run_experiment(spec_for(ml_dir, seed=3))
    b = run_experiment(spec_for(ml_dir, seed=3, workers=3))
    assert a.to_dict() == b.to_dict()
    c = run_experiment(spec_for(ml_dir, seed=4))
    assert a.to_dict() != c.to_dict()


def test_leakage_guard(ml_dir):
    spec = spec_for(ml_dir, novelty="distance", train_novelty="topic")
    _, kept = run_experiment(spec, keep_inputs=True)
    matrix, catalog = load_dataset(ml_dir)
    masks = catalog.masks_for(matrix.item_ids)
    folds = kfold_split(matrix, spec.folds, spec.seed)
    cfg = ExplainConfig(spec.k, spec.p_tau)
    for inputs, (train_idx, probe_idx) in zip(kept, folds):
        train = matrix.subset(train_idx)
        E = build_user_style_E(train, build_graph(train, spec.k), cfg)
        assert inputs.E.equals(E)
        assert inputs.E_train.equals(normalize(E, cfg))
        assert inputs.N_train.equals(build_N_matrix(train, masks, "topic", normalize=True))
        # nothing from the probe split reaches the side matrices
        assert not inputs.N_train.values_at(matrix.users[probe_idx], matrix.items[probe_idx]).any()


def test_divergent_cell_is_marked_failed(ml_dir):
    cells = [Cell("MF", FAST), Cell("BOOM", dict(FAST, lr=5.0, epochs=50, init_scale=1.0))]
    rep = run_experiment(spec_for(ml_dir, cells=cells))
    assert "BOOM" in rep.failed and "BOOM" not in rep.means()
    assert "FAILED" in compare_table(rep)


def test_spec_validation(ml_dir, tmp_path):
    with pytest.raises(ConfigError):
        spec_for(ml_dir, cells=[Cell("A"), Cell("A")])
    with pytest.raises(ConfigError):
        spec_for(ml_dir, novelty="fresh")
    with pytest.raises(ConfigError):
        spec_for(ml_dir, cells=[Cell("A", dict(norm="L7"))])
    p = tmp_path / "x.yaml"
    p.write_text(f"dataset: {ml_dir}\ngrid: table4\ngrid_params: {{lam: 0.3, epochs: 2}}\nfolds: 3\n")
    spec = ExperimentSpec.from_file(p)
    assert len(spec.cells) == 6 and spec.folds == 3 and spec.cells[4].config().lam == 0.3
    p.write_text(f"dataset: {ml_dir}\nbogus: 1\n")
    with pytest.raises(ConfigError):
        ExperimentSpec.from_file(p)


def test_sweep(ml_dir, tmp_path):
    spec = spec_for(ml_dir, output_dir=str(tmp_path), cells=[Cell("NMF", dict(FAST, delta=0.0))])
    rows = sensitivity_sweep(spec, "delta", [0, 0.5, 1.0])
    assert [r["delta"] for r in rows] == [0, 0.5, 1.0]
    lines = (tmp_path / "sweep_delta.csv").read_text().splitlines()
    assert len(lines) == 4
    long = list(csv.reader(open(tmp_path / "sweep_delta_long.csv")))
    assert long[0] == ["x", "series", "value"] and len(long) == 1 + 3 * len(METRICS)
    both = sensitivity_sweep(spec, "both", [(0.1, 0.2), (0.3, 0.4)])
    assert [(r["lam"], r["delta"]) for r in both] == [(0.1, 0.2), (0.3, 0.4)]
    with pytest.raises(ConfigError):
        sensitivity_sweep(spec, "beta", [1])
    with pytest.raises(ConfigError):
        sensitivity_sweep(spec, "delta", [-1])
    with pytest.raises(ConfigError):
        sensitivity_sweep(spec, "delta", [])


def test_select_tradeoff():
    rows = [dict(lam=0.1, delta=0.1, ndcg=0.2, e_ndcg=0.2, n_ndcg=0.01),
            dict(lam=0.5, delta=0.5, ndcg=0.15, e_ndcg=0.18, n_ndcg=0.1),
            dict(lam=1.0, delta=1.0, ndcg=0.01, e_ndcg=0.05, n_ndcg=0.2),
            dict(lam=2.0, delta=2.0, failed=True, ndcg=np.nan, e_ndcg=np.nan, n_ndcg=np.nan)]
    assert select_tradeoff(rows)["lam"] == 0.5
    with pytest.raises(ConfigError):
        select_tradeoff(rows[3:])


def test_derive_seed():
    assert derive_seed(0, 1, "MF") == derive_seed(0, 1, "MF")
    assert len({derive_seed(0, f, n) for f in range(4) for n in ("MF", "NMF")}) == 8
