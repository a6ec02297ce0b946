"""Pearson user-user (and item-item) similarity and k-nearest-neighbour graphs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .dataset import RatingMatrix
from .errors import ConfigError


@numba.njit(cache=True)
def _pearson_sorted(ia, ra, ib, rb, min_overlap=2):
    # co-rated means first, then centred sums; ia/ib sorted ascending
    n = 0
    sa = 0.0
    sb = 0.0
    p = 0
    q = 0
    while p < ia.shape[0] and q < ib.shape[0]:
        if ia[p] == ib[q]:
            sa += ra[p]
            sb += rb[q]
            n += 1
            p += 1
            q += 1
        elif ia[p] < ib[q]:
            p += 1
        else:
            q += 1
    if n < 2 or n < min_overlap:
        return 0.0, n
    ma = sa / n
    mb = sb / n
    num = 0.0
    da = 0.0
    db = 0.0
    p = 0
    q = 0
    while p < ia.shape[0] and q < ib.shape[0]:
        if ia[p] == ib[q]:
            xa = ra[p] - ma
            xb = rb[q] - mb
            num += xa * xb
            da += xa * xa
            db += xb * xb
            p += 1
            q += 1
        elif ia[p] < ib[q]:
            p += 1
        else:
            q += 1
    if da == 0.0 or db == 0.0:
        return 0.0, n
    s = num / (math.sqrt(da) * math.sqrt(db))
    if s > 1.0:
        s = 1.0
    elif s < -1.0:
        s = -1.0
    return s, n


@numba.njit(cache=True)
def _similarity_row(u, ptr, idx, val, min_overlap=2):
    n_rows = ptr.shape[0] - 1
    sims = np.zeros(n_rows)
    overlap = np.zeros(n_rows, dtype=np.int64)
    ia = idx[ptr[u]:ptr[u + 1]]
    ra = val[ptr[u]:ptr[u + 1]]
    for v in range(n_rows):
        if v == u:
            continue
        s, n = _pearson_sorted(ia, ra, idx[ptr[v]:ptr[v + 1]], val[ptr[v]:ptr[v + 1]], min_overlap)
        sims[v] = s
        overlap[v] = n
    return sims, overlap


@numba.njit(cache=True)
def _knn(ptr, idx, val, k, min_overlap=2):
    n_rows = ptr.shape[0] - 1
    nbr = np.full((n_rows, k), -1, dtype=np.int64)
    sim = np.zeros((n_rows, k))
    for u in range(n_rows):
        sims, overlap = _similarity_row(u, ptr, idx, val, min_overlap)
        cand = np.nonzero(overlap > 0)[0]
        # rounding keeps float noise from splitting exact ties; the stable
        # sort then orders tied rows by ascending index
        key = -np.round(sims[cand], 12)
        order = np.argsort(key, kind="mergesort")
        take = min(k, cand.shape[0])
        for t in range(take):
            v = cand[order[t]]
            nbr[u, t] = v
            sim[u, t] = sims[v]
    return nbr, sim


def _rows(matrix: RatingMatrix, by: str):
    m = matrix.csr() if by == "user" else matrix.csr().T.tocsr()
    m.sort_indices()
    return m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data.astype(np.float64)


def pearson(u: int, v: int, matrix: RatingMatrix, min_overlap: int = 2) -> float:
    """Pearson correlation of two users over their co-rated items.

    Means are taken over the co-rated items only.  Fewer than
    ``max(2, min_overlap)`` co-rated items, or a constant co-rated vector on
    either side, gives 0.
    """
    ia, ra = matrix.user_items(u)
    ib, rb = matrix.user_items(v)
    s, _ = _pearson_sorted(ia, ra, ib, rb, min_overlap)
    return s


def item_pearson(i: int, j: int, matrix: RatingMatrix, min_overlap: int = 2) -> float:
    """Pearson correlation of two item columns over their common raters."""
    ua, ra = matrix.item_users(i)
    ub, rb = matrix.item_users(j)
    order_a = np.argsort(ua, kind="mergesort")
    order_b = np.argsort(ub, kind="mergesort")
    s, _ = _pearson_sorted(ua[order_a], ra[order_a], ub[order_b], rb[order_b], min_overlap)
    return s


def similarity_row(matrix: RatingMatrix, u: int, by: str = "user", min_overlap: int = 2):
    """All similarities of row ``u`` plus co-rated counts, as two arrays."""
    ptr, idx, val = _rows(matrix, by)
    return _similarity_row(u, ptr, idx, val, min_overlap)


@dataclass(frozen=True)
class NeighborGraph:
    """Top-k neighbours per row, ``-1`` padded.

    ``neighbors[u, t]`` is the t-th most similar row to ``u`` and
    ``similarities[u, t]`` its Pearson weight.
    """

    k: int
    neighbors: np.ndarray
    similarities: np.ndarray
    kind: str = "user"
    min_overlap: int = 2

    def __len__(self):
        return self.neighbors.shape[0]

    def of(self, u: int) -> list[tuple[int, float]]:
        row = self.neighbors[u]
        valid = row >= 0
        return list(zip(row[valid].tolist(), self.similarities[u][valid].tolist()))

    def adjacency(self):
        """Sparse 0/1 matrix with a 1 at (u, v) when v is a neighbour of u."""
        import scipy.sparse as sp

        n = len(self)
        rows, cols = np.nonzero(self.neighbors >= 0)
        return sp.csr_matrix((np.ones(len(rows)), (rows, self.neighbors[rows, cols])), shape=(n, n))

    def save(self, path):
        """Write ``row neighbour similarity`` lines with a ``# k=..`` header."""
        path = Path(path)
        with open(path, "w") as fh:
            fh.write(f"# kind={self.kind} k={self.k} rows={len(self)} min_overlap={self.min_overlap}\n")
            for u in range(len(self)):
                for v, s in self.of(u):
                    fh.write(f"{u} {v} {s!r}\n")

    @classmethod
    def load(cls, path) -> "NeighborGraph":
        with open(path) as fh:
            header = dict(tok.split("=") for tok in fh.readline()[1:].split())
            k, n = int(header["k"]), int(header["rows"])
            neighbors = np.full((n, k), -1, dtype=np.int64)
            sims = np.zeros((n, k))
            fill = np.zeros(n, dtype=np.int64)
            for line in fh:
                u, v, s = line.split()
                u = int(u)
                neighbors[u, fill[u]] = int(v)
                sims[u, fill[u]] = float(s)
                fill[u] += 1
        return cls(k, neighbors, sims, header["kind"], int(header.get("min_overlap", 2)))


def build_graph(matrix: RatingMatrix, k: int = 10, by: str = "user", cache_dir=None,
                min_overlap: int = 2) -> NeighborGraph:
    """k-nearest-neighbour graph by Pearson similarity.

    Candidates are rows sharing at least one rated column with ``u``; they are
    ordered by similarity (descending, to 12 decimals), ties by index, so negatively
    correlated rows only enter when fewer than ``k`` others exist.  Pairs
    with fewer than ``min_overlap`` co-rated columns score 0.  With
    ``cache_dir`` the graph is stored under a name keyed by the matrix
    fingerprint and ``k``.
    """
    if k < 1:
        raise ConfigError(f"neighbour count must be >= 1, got {k}")
    if by not in ("user", "item"):
        raise ConfigError(f"unknown graph kind {by!r}")
    cache = None
    if cache_dir is not None:
        cache = Path(cache_dir) / f"graph-{by}-{matrix.fingerprint()}-k{k}-o{min_overlap}.txt"
        if cache.exists():
            return NeighborGraph.load(cache)
    ptr, idx, val = _rows(matrix, by)
    nbr, sim = _knn(ptr, idx, val, k, min_overlap)
    graph = NeighborGraph(k, nbr, sim, by, min_overlap)
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        graph.save(cache)
    return graph
