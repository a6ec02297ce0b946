"""Cross-validated experiments, sensitivity sweeps and comparison tables."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .dataset import RatingMatrix, RatingScale, kfold_split, load_dataset
from .errors import ConfigError, DivergenceError
from .explainability import ExplainConfig, SideMatrix, build_user_style_E, normalize
from .factorization import TrainConfig, train
from .metrics import METRICS, EvalReport, evaluate
from .neighborhood import build_graph
from .novelty import KINDS, NoveltyModel, build_N_matrix
from .ranking import recommend_all

log = logging.getLogger(__name__)

SWEEP_PARAMS = ("lam", "delta", "both")


@dataclass
class Cell:
    """One algorithm configuration of an experiment grid."""

    name: str
    train: dict = field(default_factory=dict)
    reranker: str | None = None

    def config(self, **overrides) -> TrainConfig:
        return TrainConfig(**{**self.train, **overrides})


def table4_grid(lam: float = 0.2, delta: float = 0.4, lam_l2: float | None = None, nemf=None, **train) -> list[Cell]:
    """The six algorithms of the ML100K comparison table."""
    nemf_lam, nemf_delta = nemf if nemf is not None else (lam, delta)
    lam_l2 = lam if lam_l2 is None else lam_l2
    return [
        Cell("MF", dict(train)),
        Cell("MF+MMR", dict(train), reranker="mmr"),
        Cell("NMF", dict(train, delta=delta, norm="L1")),
        Cell("EMF-L2", dict(train, lam=lam_l2, norm="L2")),
        Cell("EMF-L1", dict(train, lam=lam, norm="L1")),
        Cell("NEMF", dict(train, lam=nemf_lam, delta=nemf_delta, norm="L1")),
    ]


@dataclass
class ExperimentSpec:
    dataset: str
    format: str = "ml100k"
    cells: list = field(default_factory=lambda: [Cell("MF")])
    folds: int = 4
    seed: int = 0
    n: int = 10
    k: int = 10
    p_tau: int = 4
    theta: float = 0.0
    relevance: float | None = None
    novelty: str = "distance"
    train_novelty: str | None = None
    min_overlap: int = 2
    mmr_lambda: float = 0.5
    mmr_pool: int = 100
    baseline: str | None = "MF"
    output_dir: str | None = None
    workers: int = 1
    cache_dir: str | None = None

    def __post_init__(self):
        self.cells = [c if isinstance(c, Cell) else Cell(**c) for c in self.cells]
        names = [c.name for c in self.cells]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConfigError(f"duplicate cell names: {dupes}")
        if not self.cells:
            raise ConfigError("experiment needs at least one cell")
        if self.folds < 2:
            raise ConfigError(f"fold count must be >= 2, got {self.folds}")
        for kind in (self.novelty, self.train_novelty):
            if kind is not None and kind not in KINDS:
                raise ConfigError(f"unknown novelty kind {kind!r}")
        if not 0.0 <= self.mmr_lambda <= 1.0:
            raise ConfigError(f"MMR trade-off must lie in [0, 1], got {self.mmr_lambda}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for c in self.cells:
            c.config()  # validates the training parameters early
            if c.reranker not in (None, "mmr"):
                raise ConfigError(f"cell {c.name}: unknown reranker {c.reranker!r}")

    @property
    def explain(self) -> ExplainConfig:
        return ExplainConfig(self.k, self.p_tau).check()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cells"] = [{**asdict(c), "train": c.config().to_dict()} for c in self.cells]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        """Build from plain data; ``grid: table4`` expands to the six-cell grid."""
        data = dict(data)
        if "grid" in data:
            grid = data.pop("grid")
            params = data.pop("grid_params", None) or {}
            if grid != "table4":
                raise ConfigError(f"unknown grid preset {grid!r}")
            if not data.get("cells"):
                data["cells"] = [asdict(c) for c in table4_grid(**params)]
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentSpec":
        data = load_config(path)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data)


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return data


def derive_seed(master: int, fold: int, name: str) -> int:
    digest = hashlib.sha256(f"{master}:{fold}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass
class FoldInputs:
    """Everything derived from one fold's training split."""

    fold: int
    train: RatingMatrix
    probe: RatingMatrix
    E: SideMatrix
    E_train: SideMatrix
    N_train: SideMatrix
    novelty: NoveltyModel
    masks: np.ndarray


def fold_inputs(spec: ExperimentSpec, matrix: RatingMatrix, masks, train_idx, probe_idx, fold: int = 0) -> FoldInputs:
    train_m = matrix.subset(train_idx)
    probe_m = matrix.subset(probe_idx)
    cfg = spec.explain
    graph = build_graph(train_m, cfg.k, cache_dir=spec.cache_dir, min_overlap=spec.min_overlap)
    E = build_user_style_E(train_m, graph, cfg)
    kind = spec.train_novelty or spec.novelty
    N = build_N_matrix(train_m, masks, kind, normalize=True)
    return FoldInputs(fold, train_m, probe_m, E, normalize(E, cfg), N,
                      NoveltyModel(train_m, masks, spec.novelty), np.asarray(masks))


def run_cell(spec: ExperimentSpec, cell: Cell, inputs: FoldInputs, log_dir=None) -> dict:
    """Train and evaluate one cell on one fold; returns the metric means."""
    cfg = cell.config(seed=derive_seed(spec.seed, inputs.fold, cell.name))
    model = train(inputs.train, inputs.E_train, inputs.N_train, cfg)
    if log_dir is not None:
        with open(Path(log_dir) / f"{cell.name}_fold{inputs.fold}.log", "w") as fh:
            for epoch, err in enumerate(model.log, start=1):
                fh.write(f"{epoch} {err!r}\n")
    users = np.nonzero(inputs.probe.user_counts)[0]
    lists = recommend_all(model, inputs.train, users, spec.n, reranker=cell.reranker,
                          pool=spec.mmr_pool, masks=inputs.masks, mmr_lambda=spec.mmr_lambda)
    result = evaluate(lists, inputs.probe, inputs.E, inputs.novelty, spec.explain,
                      RatingScale(), spec.n, spec.theta, spec.relevance)
    return result.values


def run_experiment(spec: ExperimentSpec, keep_inputs: bool = False, data=None):
    """Cross-validate every cell of ``spec``.

    Returns an :class:`EvalReport`; with ``keep_inputs`` also the list of
    per-fold :class:`FoldInputs` actually used for training.
    """
    matrix, catalog = data if data is not None else load_dataset(spec.dataset, spec.format)
    masks = catalog.masks_for(matrix.item_ids)
    folds = kfold_split(matrix, spec.folds, spec.seed)
    report = EvalReport(spec.folds, [c.name for c in spec.cells], baseline=spec.baseline)
    out_dir = log_dir = None
    if spec.output_dir is not None:
        out_dir = Path(spec.output_dir)
        log_dir = out_dir / "logs"
        log_dir.mkdir(parents=True, exist_ok=True)

    kept = []
    results = {}
    with ThreadPoolExecutor(max_workers=spec.workers) as pool:
        for f, (train_idx, probe_idx) in enumerate(folds):
            inputs = fold_inputs(spec, matrix, masks, train_idx, probe_idx, f)
            if keep_inputs:
                kept.append(inputs)
            futures = {c.name: pool.submit(run_cell, spec, c, inputs, log_dir) for c in spec.cells}
            for name, fut in futures.items():
                try:
                    results[(name, f)] = fut.result()
                except DivergenceError as exc:
                    log.warning("cell %s fold %d diverged: %s", name, f, exc)
                    results[(name, f)] = exc
            log.info("fold %d done", f)

    for c in spec.cells:
        for f in range(spec.folds):
            res = results[(c.name, f)]
            if isinstance(res, Exception):
                report.fail(c.name, f"fold {f}: {res}")
            else:
                report.add(c.name, f, res)
    for name in report.failed:
        report.values.pop(name, None)

    if out_dir is not None:
        write_report(report, out_dir, spec)
    return (report, kept) if keep_inputs else report


def write_report(report: EvalReport, out_dir, spec: ExperimentSpec | None = None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    with open(out_dir / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algorithm", "fold", "metric", "value"])
        for row in report.rows():
            w.writerow([row[0], row[1], row[2], repr(row[3])])
        for name, reason in report.failed.items():
            w.writerow([name, "", "failed", reason])
    if spec is not None:
        write_resolved_config(spec.to_dict(), out_dir)


def write_resolved_config(config: dict, out_dir):
    with open(Path(out_dir) / "config.json", "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True, default=str)


def sensitivity_sweep(spec: ExperimentSpec, parameter: str, values, base: Cell | None = None, data=None) -> list[dict]:
    """One cross-validated run per parameter value.

    ``parameter`` is ``"lam"``, ``"delta"`` or ``"both"``; for ``"both"``
    ``values`` are ``(lam, delta)`` pairs.  Returns one row per value with
    the mean of every metric.
    """
    if parameter not in SWEEP_PARAMS:
        raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {parameter!r}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    for v in values:
        parts = v if parameter == "both" else (v,)
        if parameter == "both" and len(parts) != 2:
            raise ConfigError(f"'both' sweeps take (lam, delta) pairs, got {v!r}")
        if any(not math.isfinite(x) or x < 0 for x in parts):
            raise ConfigError(f"sweep values must be finite and non-negative, got {v!r}")
    base = base or spec.cells[0]
    data = data if data is not None else load_dataset(spec.dataset, spec.format)
    cells = []
    for v in values:
        if parameter == "both":
            lam, delta = v
            over = dict(lam=lam, delta=delta)
            name = f"{base.name}[lam={lam:g},delta={delta:g}]"
        else:
            over = {parameter: v}
            name = f"{base.name}[{parameter}={v:g}]"
        cells.append(Cell(name, {**base.train, **over}, base.reranker))
    sub = replace(spec, cells=cells, baseline=None, output_dir=None)
    report = run_experiment(sub, data=data)
    rows = []
    for v, c in zip(values, cells):
        row = {"lam": v[0], "delta": v[1]} if parameter == "both" else {parameter: v}
        row["failed"] = c.name in report.failed
        for m in METRICS:
            row[m] = math.nan if row["failed"] else report.mean(c.name, m)
        rows.append(row)
    if spec.output_dir is not None:
        write_sweep(rows, parameter, spec.output_dir)
        write_resolved_config({**spec.to_dict(), "sweep": {"parameter": parameter, "values": values}},
                              spec.output_dir)
    return rows


def write_sweep(rows, parameter, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    keys = ["lam", "delta"] if parameter == "both" else [parameter]
    with open(out_dir / f"sweep_{parameter}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys + list(METRICS))
        for r in rows:
            w.writerow([r[k] for k in keys] + [r[m] for m in METRICS])
    with open(out_dir / f"sweep_{parameter}_long.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "series", "value"])
        for r in rows:
            x = f"{r['lam']}/{r['delta']}" if parameter == "both" else r[parameter]
            for m in METRICS:
                w.writerow([x, m, r[m]])


def select_tradeoff(rows, metrics=("ndcg", "e_ndcg", "n_ndcg")) -> dict:
    """Row with the best harmonic mean of column-max-normalised ``metrics``."""
    ok = [r for r in rows if not r.get("failed")]
    if not ok:
        raise ConfigError("no successful sweep rows to choose from")
    tops = {m: max(r[m] for r in ok) for m in metrics}

    def score(r):
        parts = [r[m] / tops[m] if tops[m] > 0 else 0.0 for m in metrics]
        if min(parts) <= 0:
            return 0.0
        return len(parts) / sum(1.0 / p for p in parts)

    return max(ok, key=score)


HEADERS = {"precision": "Prec.", "ndcg": "nDCG", "mep": "MEP", "e_ndcg": "E-nDCG", "n_ndcg": "N-nDCG"}


def compare_table(report: EvalReport) -> str:
    """Plain-text table of mean metrics in percent; ``*`` marks each column's best."""
    means = report.means()
    best = {m: max((means[c][m] for c in means), default=None) for m in METRICS}
    width = max([len("Algorithm")] + [len(c) for c in report.cells])
    lines = [f"{'Algorithm':<{width}}  " + "  ".join(f"{HEADERS[m]:>8}" for m in METRICS)]
    lines.append("-" * len(lines[0]))
    for c in report.cells:
        if c in report.failed:
            lines.append(f"{c:<{width}}  " + "  ".join(f"{'FAILED':>8}" for _ in METRICS))
            continue
        cells = []
        for m in METRICS:
            v = means[c][m]
            mark = "*" if v == best[m] else " "
            cells.append(f"{v * 100:7.2f}{mark}")
        lines.append(f"{c:<{width}}  " + "  ".join(cells))
    return "\n".join(lines)


def default_output_dir() -> str:
    return os.environ.get("NEMF_OUTPUT_DIR", "nemf-out")
