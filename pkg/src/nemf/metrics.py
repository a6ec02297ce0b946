"""Accuracy, explainability and novelty metrics for top-N lists.

All rank-discounted metrics share one discount: the gain at rank 1 counts in
full and the gain at rank ``i >= 2`` is divided by ``log2(i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .dataset import RatingMatrix, RatingScale
from .explainability import ExplainConfig, SideMatrix, max_explainability

METRICS = ("precision", "ndcg", "mep", "e_ndcg", "n_ndcg")


def discounts(n: int) -> np.ndarray:
    d = np.ones(n)
    if n > 1:
        d[1:] = 1.0 / np.log2(np.arange(2, n + 1))
    return d


def dcg(gains) -> float:
    gains = np.asarray(gains, dtype=np.float64)
    return float(gains @ discounts(len(gains)))


def _items(ranked):
    return np.asarray(getattr(ranked, "items", ranked), dtype=np.int64)


def _length(ranked, n):
    if n is not None:
        return n
    return getattr(ranked, "n", len(_items(ranked)))


def precision_at_n(ranked, relevant, n: int | None = None) -> float:
    """Fraction of the N list slots holding a relevant item."""
    items = _items(ranked)
    n = _length(ranked, n)
    if n == 0:
        return 0.0
    relevant = set(int(x) for x in relevant)
    return sum(1 for i in items[:n] if int(i) in relevant) / n


def accuracy_ndcg(ranked, relevant, n: int | None = None) -> float:
    """Binary-gain nDCG against an ideal list of ``min(N, |relevant|)`` hits."""
    items = _items(ranked)
    n = _length(ranked, n)
    relevant = set(int(x) for x in relevant)
    if n == 0 or not relevant:
        return 0.0
    gains = [1.0 if int(i) in relevant else 0.0 for i in items[:n]]
    ideal = dcg(np.ones(min(n, len(relevant))))
    return dcg(gains) / ideal


def explainable_count(u: int, ranked, E: SideMatrix, theta: float = 0.0) -> int:
    return int(np.count_nonzero(E.values_at(np.full(len(_items(ranked)), u), _items(ranked)) > theta))


def mep(lists: dict, E: SideMatrix, theta: float = 0.0, n: int | None = None) -> float:
    """Mean over users of the share of list slots whose explainability exceeds ``theta``."""
    if not lists:
        return 0.0
    vals = []
    for u, ranked in lists.items():
        size = _length(ranked, n)
        vals.append(explainable_count(u, ranked, E, theta) / size if size else 0.0)
    return float(np.mean(vals))


def e_ndcg(u: int, ranked, E: SideMatrix, cfg: ExplainConfig = ExplainConfig(),
           scale: RatingScale = RatingScale(), n: int | None = None) -> float:
    """Discounted explainability of the list over the all-``E_max`` ideal.

    ``E`` holds raw (unnormalised) weights; ``E_max = scale.max * cfg.k``.
    """
    items = _items(ranked)
    n = _length(ranked, n)
    if n == 0:
        return 0.0
    gains = E.values_at(np.full(len(items[:n]), u), items[:n])
    return dcg(gains) / dcg(np.full(n, max_explainability(cfg, scale)))


def n_ndcg(u: int, ranked, novelty, n: int | None = None) -> float:
    """Discounted novelty of the list over the all-``N_max`` ideal.

    ``novelty`` is a :class:`~nemf.novelty.NoveltyModel` built on the
    training ratings.
    """
    items = _items(ranked)
    n = _length(ranked, n)
    if n == 0:
        return 0.0
    gains = novelty.scores(u, items[:n])
    return dcg(gains) / dcg(np.full(n, novelty.n_max))


def list_novelty(u: int, ranked, novelty) -> float:
    items = _items(ranked)
    if len(items) == 0:
        return 0.0
    return float(np.mean(novelty.scores(u, items)))


def paired_t_test(a, b) -> float:
    """Two-tailed paired t-test p-value.

    Zero-variance differences give 1.0 when the means agree and 0.0 otherwise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-d and of equal length")
    if len(a) < 2:
        raise ValueError("need at least two paired observations")
    d = a - b
    if np.all(d == d[0]):
        return 1.0 if d[0] == 0 else 0.0
    return float(stats.ttest_rel(a, b).pvalue)


def relevant_items(probe: RatingMatrix, u: int, threshold: float = 4) -> np.ndarray:
    items, ratings = probe.user_items(u)
    return items[ratings >= threshold]


@dataclass
class FoldMetrics:
    values: dict
    users: int

    def __getitem__(self, key):
        return self.values[key]


def evaluate(lists: dict, probe: RatingMatrix, E: SideMatrix, novelty, cfg: ExplainConfig = ExplainConfig(),
             scale: RatingScale = RatingScale(), n: int = 10, theta: float = 0.0,
             relevance: float | None = None) -> FoldMetrics:
    """All five list metrics averaged over users that have probe ratings.

    ``relevance`` is the probe rating counted as relevant (default ``cfg.p_tau``).
    """
    relevance = cfg.p_tau if relevance is None else relevance
    acc = {m: [] for m in METRICS}
    for u in sorted(lists):
        if probe.user_counts[u] == 0:
            continue
        ranked = lists[u]
        rel = relevant_items(probe, u, relevance)
        acc["precision"].append(precision_at_n(ranked, rel, n))
        acc["ndcg"].append(accuracy_ndcg(ranked, rel, n))
        acc["mep"].append(explainable_count(u, ranked, E, theta) / n)
        acc["e_ndcg"].append(e_ndcg(u, ranked, E, cfg, scale, n))
        acc["n_ndcg"].append(n_ndcg(u, ranked, novelty, n))
    users = len(acc["precision"])
    return FoldMetrics({m: (float(np.mean(v)) if v else 0.0) for m, v in acc.items()}, users)


@dataclass
class EvalReport:
    """Per-cell, per-fold metric values with means and p-values against a baseline."""

    folds: int
    cells: list = field(default_factory=list)
    values: dict = field(default_factory=dict)
    failed: dict = field(default_factory=dict)
    baseline: str | None = None

    def add(self, cell: str, fold: int, metrics: dict):
        if cell not in self.cells:
            self.cells.append(cell)
        self.values.setdefault(cell, {}).setdefault(fold, dict(metrics))

    def fail(self, cell: str, reason: str):
        if cell not in self.cells:
            self.cells.append(cell)
        self.failed[cell] = reason

    def series(self, cell: str, metric: str) -> list:
        folds = self.values.get(cell, {})
        return [folds[f][metric] for f in sorted(folds)]

    def mean(self, cell: str, metric: str) -> float:
        s = self.series(cell, metric)
        return float(np.mean(s)) if s else math.nan

    def means(self) -> dict:
        return {c: {m: self.mean(c, m) for m in METRICS} for c in self.cells if c not in self.failed}

    def p_values(self) -> dict:
        if self.baseline is None or self.baseline in self.failed or self.baseline not in self.values:
            return {}
        out = {}
        for c in self.cells:
            if c == self.baseline or c in self.failed:
                continue
            out[c] = {m: paired_t_test(self.series(c, m), self.series(self.baseline, m)) for m in METRICS}
        return out

    def rows(self):
        """Long-format rows ``(cell, fold, metric, value)``."""
        for c in self.cells:
            for f in sorted(self.values.get(c, {})):
                for m in METRICS:
                    yield c, f, m, self.values[c][f][m]

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        rep = cls(d["folds"], list(d["cells"]), baseline=d.get("baseline"))
        for c, folds in d.get("per_fold", {}).items():
            for f, v in folds.items():
                rep.add(c, int(f), v)
        rep.failed = dict(d.get("failed", {}))
        return rep

    def to_dict(self) -> dict:
        return {
            "folds": self.folds,
            "baseline": self.baseline,
            "cells": self.cells,
            "means": self.means(),
            "p_values": self.p_values(),
            "failed": self.failed,
            "per_fold": {c: {str(f): v for f, v in self.values.get(c, {}).items()} for c in self.cells},
        }
