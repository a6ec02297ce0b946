"""Per-user item novelty models and the novelty side matrix.

Three models are supported:

``distance``
    mean Jaccard distance between the item's genres and each item in the
    user's history (unexpectedness); bounded by 1.
``popularity``
    ``-log2(|U_i| / |U|)``, the global long-tail model; bounded by
    ``-log2(1 / |U|)``.
``topic``
    topic coverage: ``1 / |{j in I_u : j in c}|`` for a category ``c``;
    for an item, the mean over its genres.

Items are addressed by internal index; ``masks`` holds the genre bitmask of
each internal item (``catalog.masks_for(matrix.item_ids)``).
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from .dataset import ItemCatalog, RatingMatrix
from .errors import ConfigError
from .explainability import SideMatrix

KINDS = ("distance", "popularity", "topic")


def _popcount(x):
    return bin(int(x)).count("1")


def jaccard_distance_masks(a: int, b: int) -> float:
    union = _popcount(a | b)
    if union == 0:
        return 0.0
    return 1.0 - _popcount(a & b) / union


def jaccard_distance(i: int, j: int, catalog: ItemCatalog) -> float:
    """Jaccard distance between the genre sets of two catalog items (external ids)."""
    return jaccard_distance_masks(catalog.mask(i), catalog.mask(j))


def jaccard_distance_table(masks) -> np.ndarray:
    """Pairwise Jaccard distance matrix of a mask vector."""
    masks = np.asarray(masks, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(63)) & 1).astype(np.float64)
    inter = bits @ bits.T
    sizes = bits.sum(axis=1)
    union = sizes[:, None] + sizes[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.where(union > 0, 1.0 - inter / union, 0.0)
    return d


def distance_novelty(u: int, i: int, matrix: RatingMatrix, masks) -> float:
    """Mean genre distance of item ``i`` to the items user ``u`` has rated."""
    history, _ = matrix.user_items(u)
    if len(history) == 0:
        return 1.0
    mi = int(masks[i])
    return sum(jaccard_distance_masks(mi, int(masks[j])) for j in history) / len(history)


def popularity_max(matrix: RatingMatrix) -> float:
    return -math.log2(1.0 / matrix.n_users)


def popularity_novelty(i: int, matrix: RatingMatrix) -> float:
    count = int(matrix.item_counts[i])
    if count == 0:
        return popularity_max(matrix)
    return -math.log2(count / matrix.n_users)


def topic_coverage_novelty(u: int, genre_bit: int, matrix: RatingMatrix, masks) -> float:
    """Reciprocal count of ``u``'s rated items in the genre with bit index ``genre_bit``."""
    history, _ = matrix.user_items(u)
    count = int(np.count_nonzero((np.asarray(masks)[history] >> genre_bit) & 1))
    return 1.0 if count == 0 else 1.0 / count


class NoveltyModel:
    """Vectorised novelty scores for one training matrix.

    Distance novelty groups each user's history by distinct genre mask so a
    score costs O(#distinct masks) instead of O(|I_u|).
    """

    def __init__(self, matrix: RatingMatrix, masks, kind: str = "distance"):
        if kind not in KINDS:
            raise ConfigError(f"unknown novelty kind {kind!r}; choose from {KINDS}")
        self.kind = kind
        self.matrix = matrix
        self.masks = np.asarray(masks, dtype=np.int64)
        if len(self.masks) != matrix.n_items:
            raise ConfigError("one genre mask per item is required")
        if kind == "distance":
            self.n_max = 1.0
            uniq, group = np.unique(self.masks, return_inverse=True)
            self._group = group.ravel()
            self._dist = jaccard_distance_table(uniq)
            self._hist = sp.csr_matrix(
                (np.ones(len(matrix)), (matrix.users, self._group[matrix.items])),
                shape=(matrix.n_users, len(uniq)),
            )
            self._hist.sum_duplicates()
        elif kind == "popularity":
            self.n_max = popularity_max(matrix)
            with np.errstate(divide="ignore"):
                pop = -np.log2(matrix.item_counts / matrix.n_users)
            self._pop = np.where(matrix.item_counts > 0, pop, self.n_max)
        else:
            self.n_max = 1.0
            bits = ((self.masks[:, None] >> np.arange(63)) & 1).astype(np.float64)
            used = np.nonzero(bits.any(axis=0))[0]
            self._bits = bits[:, used]
            self._genre_counts = sp.csr_matrix(
                (np.ones(len(matrix)), (matrix.users, matrix.items)), shape=matrix.shape
            ) @ self._bits

    def scores(self, u: int, items=None) -> np.ndarray:
        """Novelty of ``items`` (default: all items) for user ``u``."""
        if items is None:
            items = np.arange(self.matrix.n_items)
        items = np.asarray(items, dtype=np.int64)
        if self.kind == "popularity":
            return self._pop[items]
        if self.kind == "distance":
            size = self.matrix.user_counts[u]
            if size == 0:
                return np.ones(len(items))
            lo, hi = self._hist.indptr[u], self._hist.indptr[u + 1]
            groups, counts = self._hist.indices[lo:hi], self._hist.data[lo:hi]
            return counts @ self._dist[np.ix_(groups, self._group[items])] / size
        counts = np.asarray(self._genre_counts[u]).ravel()
        per_genre = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 1.0)
        b = self._bits[items]
        return (b @ per_genre) / b.sum(axis=1)

    def item_novelty(self, u: int, i: int) -> float:
        return float(self.scores(u, [i])[0])


def build_N_matrix(matrix: RatingMatrix, masks, kind: str = "distance", normalize: bool = False) -> SideMatrix:
    """Novelty weights at every observed (user, item) pair of ``matrix``.

    With ``normalize`` the weights are divided by the model's ideal novelty so
    they lie in [0, 1].
    """
    model = NoveltyModel(matrix, masks, kind)
    values = np.empty(len(matrix))
    for u in range(matrix.n_users):
        rec = matrix.user_records(u)
        if len(rec):
            values[rec] = model.scores(u, matrix.items[rec])
    if normalize:
        values = values / model.n_max
    m = sp.csr_matrix((values, (matrix.users, matrix.items)), shape=matrix.shape)
    m.eliminate_zeros()
    m.sort_indices()
    return SideMatrix(m, f"novelty-{kind}", normalized=normalize)
