"""Top-N recommendation lists and MMR diversity re-ranking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import RatingMatrix
from .errors import ConfigError
from .novelty import jaccard_distance_table


@dataclass(frozen=True)
class RankedList:
    user: int
    items: np.ndarray
    scores: np.ndarray
    n: int

    @property
    def short(self) -> bool:
        """True when fewer than ``n`` items could be recommended."""
        return len(self.items) < self.n

    def __len__(self):
        return len(self.items)


def rank_scores(scores: np.ndarray, exclude=None, n: int | None = None):
    """Indices sorted by (score desc, index asc), skipping ``exclude``."""
    scores = np.asarray(scores, dtype=np.float64)
    cand = np.arange(len(scores))
    if exclude is not None and len(exclude):
        keep = np.ones(len(scores), dtype=bool)
        keep[np.asarray(exclude, dtype=np.int64)] = False
        cand = cand[keep]
    s = scores[cand]
    if n is not None and n < len(cand):
        # pre-select everything that can tie with the n-th best, then sort exactly
        kth = np.partition(-s, n - 1)[n - 1]
        sel = -s <= kth
        cand, s = cand[sel], s[sel]
    order = np.lexsort((cand, -s))
    out = cand[order]
    return out if n is None else out[:n]


def top_n(model, train: RatingMatrix, u: int, n: int = 10) -> RankedList:
    """The ``n`` best-scored items ``u`` has not rated in ``train``."""
    if not 0 <= u < model.n_users:
        raise IndexError(f"user {u} outside model")
    scores = model.scores(u)
    rated, _ = train.user_items(u)
    items = rank_scores(scores, rated, n)
    return RankedList(u, items, scores[items], n)


def minmax(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) == 0:
        return scores
    lo, hi = scores.min(), scores.max()
    if hi == lo:
        return np.full(len(scores), 0.5)
    return (scores - lo) / (hi - lo)


def mmr_rerank(candidates: RankedList, masks, n: int = 10, lam: float = 0.5) -> RankedList:
    """Greedy maximal-marginal-relevance selection of ``n`` items.

    Each step picks the candidate maximising
    ``(1 - lam) * rel + lam * mean Jaccard distance to the items already chosen``,
    where ``rel`` is the min-max normalised score over the pool and the
    distance term of the first pick is 1.  Ties keep candidate order.
    """
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"MMR trade-off must lie in [0, 1], got {lam}")
    pool = np.asarray(candidates.items, dtype=np.int64)
    rel = minmax(candidates.scores)
    dist = jaccard_distance_table(np.asarray(masks, dtype=np.int64)[pool])
    take = min(n, len(pool))
    chosen = []
    free = np.ones(len(pool), dtype=bool)
    dist_sum = np.zeros(len(pool))
    for step in range(take):
        div = np.ones(len(pool)) if step == 0 else dist_sum / step
        obj = (1.0 - lam) * rel + lam * div
        obj[~free] = -np.inf
        k = int(np.argmax(obj))
        chosen.append(k)
        free[k] = False
        dist_sum += dist[k]
    chosen = np.asarray(chosen, dtype=np.int64)
    return RankedList(candidates.user, pool[chosen], np.asarray(candidates.scores)[chosen], n)


def recommend_all(model, train: RatingMatrix, users, n: int = 10, reranker=None, pool: int = 100, masks=None, mmr_lambda: float = 0.5):
    """Ranked lists for ``users``; with ``reranker="mmr"`` a pool is re-ranked."""
    out = {}
    for u in users:
        u = int(u)
        if reranker is None:
            out[u] = top_n(model, train, u, n)
        elif reranker == "mmr":
            if masks is None:
                raise ConfigError("MMR re-ranking needs item genre masks")
            out[u] = mmr_rerank(top_n(model, train, u, max(pool, n)), masks, n, mmr_lambda)
        else:
            raise ConfigError(f"unknown reranker {reranker!r}")
    return out


def export_lists(lists, path, matrix: RatingMatrix | None = None):
    """Write ``user item rank score`` lines (external ids when ``matrix`` is given)."""
    with open(path, "w") as fh:
        for u in sorted(lists):
            rl = lists[u]
            uid = matrix.user_ids[u] if matrix is not None else u
            for rank, (i, s) in enumerate(zip(rl.items, rl.scores), start=1):
                iid = matrix.item_ids[i] if matrix is not None else i
                fh.write(f"{uid} {iid} {rank} {s!r}\n")
