"""Neighbourhood-based explainability weights.

``E[u, i]`` sums the positive ratings (>= ``p_tau``) that the k nearest
neighbours of ``u`` gave item ``i``; equivalently
``sum_r r * |{v in NN(u): r_vi = r}|`` over positive ``r``.  The item-style
variant swaps roles: it sums ``u``'s own positive ratings on the k items most
similar to ``i``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .dataset import RatingMatrix, RatingScale
from .errors import ConfigError
from .neighborhood import NeighborGraph


@dataclass(frozen=True)
class ExplainConfig:
    k: int = 10
    p_tau: int = 4

    def check(self, scale: RatingScale = RatingScale()):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not scale.contains(self.p_tau):
            raise ConfigError(f"P_tau={self.p_tau} outside rating scale [{scale.min}, {scale.max}]")
        return self


@dataclass(frozen=True)
class SideMatrix:
    """Sparse non-negative user x item weights; absent entries are zero."""

    data: sp.csr_matrix
    kind: str
    k: int | None = None
    p_tau: int | None = None
    normalized: bool = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def nnz(self):
        return self.data.nnz

    def get(self, u: int, i: int) -> float:
        return float(self.data[u, i])

    def row(self, u: int) -> np.ndarray:
        """Dense weights of user ``u`` over all items."""
        out = np.zeros(self.shape[1])
        lo, hi = self.data.indptr[u], self.data.indptr[u + 1]
        out[self.data.indices[lo:hi]] = self.data.data[lo:hi]
        return out

    def values_at(self, users, items) -> np.ndarray:
        """Weights at the given (user, item) pairs, zero where absent."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        d = self.data
        n_cols = d.shape[1]
        # row-major keys of a CSR with sorted indices are already sorted
        keys = np.repeat(np.arange(d.shape[0], dtype=np.int64), np.diff(d.indptr)) * n_cols + d.indices
        want = users * n_cols + items
        pos = np.minimum(np.searchsorted(keys, want), max(len(keys) - 1, 0))
        out = np.zeros(len(users))
        if len(keys):
            hit = keys[pos] == want
            out[hit] = d.data[pos[hit]]
        return out

    def scaled(self, factor: float) -> "SideMatrix":
        return replace(self, data=(self.data * factor).tocsr(), normalized=True)

    def equals(self, other: "SideMatrix") -> bool:
        a, b = self.data, other.data
        return (a.shape == b.shape and a.nnz == b.nnz
                and np.array_equal(a.indptr, b.indptr)
                and np.array_equal(a.indices, b.indices)
                and np.array_equal(a.data, b.data))

    def triplets(self):
        coo = self.data.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order], coo.col[order], coo.data[order]

    def export(self, path, matrix: RatingMatrix | None = None):
        """Write ``user item weight`` lines (external ids when ``matrix`` is given)."""
        rows, cols, vals = self.triplets()
        with open(path, "w") as fh:
            fh.write(f"# kind={self.kind} k={self.k} p_tau={self.p_tau} normalized={self.normalized}\n")
            for u, i, w in zip(rows, cols, vals):
                if matrix is not None:
                    u, i = matrix.user_ids[u], matrix.item_ids[i]
                fh.write(f"{u} {i} {w!r}\n")


def _finish(m) -> sp.csr_matrix:
    m = sp.csr_matrix(m)
    m.eliminate_zeros()
    m.sort_indices()
    return m


def positive_ratings(matrix: RatingMatrix, p_tau: int) -> sp.csr_matrix:
    keep = matrix.ratings >= p_tau
    return _finish(sp.csr_matrix((matrix.ratings[keep], (matrix.users[keep], matrix.items[keep])),
                                 shape=matrix.shape))


def build_user_style_E(matrix: RatingMatrix, graph: NeighborGraph, cfg: ExplainConfig = ExplainConfig()) -> SideMatrix:
    if graph.kind != "user" or len(graph) != matrix.n_users:
        raise ConfigError("user-style explainability needs a user neighbour graph of the same matrix")
    if graph.k != cfg.k:
        raise ConfigError(f"graph built with k={graph.k}, config asks for k={cfg.k}")
    e = graph.adjacency() @ positive_ratings(matrix, cfg.p_tau)
    return SideMatrix(_finish(e), "explainability-user", cfg.k, cfg.p_tau)


def build_item_style_E(matrix: RatingMatrix, item_graph: NeighborGraph, cfg: ExplainConfig = ExplainConfig()) -> SideMatrix:
    if item_graph.kind != "item" or len(item_graph) != matrix.n_items:
        raise ConfigError("item-style explainability needs an item neighbour graph of the same matrix")
    if item_graph.k != cfg.k:
        raise ConfigError(f"graph built with k={item_graph.k}, config asks for k={cfg.k}")
    e = positive_ratings(matrix, cfg.p_tau) @ item_graph.adjacency().T
    return SideMatrix(_finish(e), "explainability-item", cfg.k, cfg.p_tau)


def max_explainability(cfg: ExplainConfig, scale: RatingScale = RatingScale()) -> float:
    """Weight reached when all k neighbours give the top rating."""
    return float(scale.max * cfg.k)


def normalize(E: SideMatrix, cfg: ExplainConfig, scale: RatingScale = RatingScale()) -> SideMatrix:
    if E.normalized:
        raise ConfigError("matrix is already normalized")
    return E.scaled(1.0 / max_explainability(cfg, scale))


def explainability_from_histogram(histogram: dict, p_tau: int) -> int:
    """Weighted count of positive ratings in a ``{rating: count}`` histogram."""
    return sum(r * c for r, c in histogram.items() if r >= p_tau)


def neighbor_histogram(matrix: RatingMatrix, graph: NeighborGraph, u: int, i: int) -> dict[int, int]:
    """How many of ``u``'s neighbours gave item ``i`` each rating value."""
    users, ratings = matrix.item_users(i)
    rated = dict(zip(users.tolist(), ratings.tolist()))
    counts = Counter(int(rated[v]) for v, _ in graph.of(u) if v in rated)
    return dict(sorted(counts.items()))
