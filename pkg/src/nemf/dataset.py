"""MovieLens parsing, rating-matrix indexing and cross-validation folds."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ParseError, ValidationError

ML100K_GENRES = (
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy",
    "Crime", "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror",
    "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
)
ML1M_GENRES = (
    "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
    "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical",
    "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
)
UNKNOWN_GENRE = "unknown"


@dataclass(frozen=True)
class RatingScale:
    min: int = 1
    max: int = 5

    def __post_init__(self):
        if self.min >= self.max:
            raise ConfigError(f"rating scale min {self.min} must be below max {self.max}")

    def contains(self, rating) -> bool:
        return self.min <= rating <= self.max


@dataclass(frozen=True)
class RatingRecord:
    user_id: int
    item_id: int
    rating: int
    timestamp: int = 0


def _parse_lines(path, sep, scale, fmt):
    records = []
    with open(path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(sep)
            if len(parts) != 4:
                raise ParseError(f"expected 4 {fmt} fields, got {len(parts)}", path, lineno)
            try:
                user, item, rating, ts = (int(p) for p in parts)
            except ValueError:
                raise ParseError(f"non-integer field in {line!r}", path, lineno) from None
            if not scale.contains(rating):
                raise ValidationError(
                    f"{path}:{lineno}: rating {rating} outside [{scale.min}, {scale.max}]"
                )
            records.append(RatingRecord(user, item, rating, ts))
    return records


def parse_ml100k_ratings(path, scale: RatingScale = RatingScale()) -> list[RatingRecord]:
    """Read a TAB-separated ``u.data`` file (user, item, rating, timestamp)."""
    return _parse_lines(path, "\t", scale, "TAB-separated")


def parse_ml1m_ratings(path, scale: RatingScale = RatingScale()) -> list[RatingRecord]:
    """Read a ``::``-separated ``ratings.dat`` file."""
    return _parse_lines(path, "::", scale, "'::'-separated")


@dataclass(frozen=True)
class ItemCatalog:
    """Genre membership of items as bitmasks over an ordered genre vocabulary."""

    genres: tuple[str, ...]
    item_ids: np.ndarray
    masks: np.ndarray
    titles: tuple[str, ...] = ()
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(self.genres) > 63:
            raise ValidationError("at most 63 genres fit in a bitmask")
        if len(self._index) == 0:
            self._index.update({int(i): k for k, i in enumerate(self.item_ids)})
        if np.any(self.masks == 0):
            raise ValidationError("every catalog item needs at least one genre")

    def __len__(self):
        return len(self.item_ids)

    @property
    def unknown_bit(self) -> int:
        return 1 << self.genres.index(UNKNOWN_GENRE)

    def mask(self, item_id: int) -> int:
        try:
            return int(self.masks[self._index[int(item_id)]])
        except KeyError:
            raise KeyError(f"item {item_id} not in catalog") from None

    def genre_names(self, item_id: int) -> list[str]:
        m = self.mask(item_id)
        return [g for b, g in enumerate(self.genres) if m >> b & 1]

    def title(self, item_id: int) -> str:
        if not self.titles:
            return str(item_id)
        return self.titles[self._index[int(item_id)]]

    def masks_for(self, item_ids: Iterable[int]) -> np.ndarray:
        """Masks aligned with ``item_ids``; ids missing from the catalog get "unknown"."""
        if UNKNOWN_GENRE in self.genres:
            fallback = self.unknown_bit
        else:
            fallback = None
        out = []
        for i in item_ids:
            k = self._index.get(int(i))
            if k is None:
                if fallback is None:
                    raise KeyError(f"item {i} not in catalog")
                out.append(fallback)
            else:
                out.append(int(self.masks[k]))
        return np.asarray(out, dtype=np.int64)


def _catalog(genres, ids, masks, titles):
    genres = tuple(genres)
    masks = np.asarray(masks, dtype=np.int64)
    if np.any(masks == 0):
        if UNKNOWN_GENRE not in genres:
            genres = genres + (UNKNOWN_GENRE,)
        masks = np.where(masks == 0, 1 << genres.index(UNKNOWN_GENRE), masks)
    return ItemCatalog(genres, np.asarray(ids, dtype=np.int64), masks, tuple(titles))


def parse_items(path, format: str = "ml100k") -> ItemCatalog:
    """Read ``u.item`` (ml100k) or ``movies.dat`` (ml1m) into an :class:`ItemCatalog`."""
    ids, masks, titles = [], [], []
    if format == "ml100k":
        genres = ML100K_GENRES
        with open(path, encoding="latin-1") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\r\n")
                if not line.strip():
                    continue
                parts = line.split("|")
                if len(parts) < 5 + len(genres):
                    raise ParseError(f"expected {5 + len(genres)} '|' fields", path, lineno)
                flags = parts[-len(genres):]
                try:
                    item_id = int(parts[0])
                    bits = [int(f) for f in flags]
                except ValueError:
                    raise ParseError("non-integer id or genre flag", path, lineno) from None
                if any(b not in (0, 1) for b in bits):
                    raise ParseError("genre flags must be 0 or 1", path, lineno)
                ids.append(item_id)
                masks.append(sum(1 << k for k, b in enumerate(bits) if b))
                titles.append("|".join(parts[1:-len(genres) - 3]))
    elif format == "ml1m":
        genres = ML1M_GENRES
        index = {g: k for k, g in enumerate(genres)}
        with open(path, encoding="latin-1") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\r\n")
                if not line.strip():
                    continue
                parts = line.split("::")
                if len(parts) != 3:
                    raise ParseError("expected 'id::title::genres'", path, lineno)
                try:
                    item_id = int(parts[0])
                except ValueError:
                    raise ParseError(f"non-integer item id {parts[0]!r}", path, lineno) from None
                names = [g for g in parts[2].split("|") if g]
                unknown = [g for g in names if g not in index]
                if unknown:
                    raise ValidationError(f"{path}:{lineno}: unknown genre(s) {unknown}")
                ids.append(item_id)
                masks.append(sum(1 << index[g] for g in names))
                titles.append(parts[1])
    else:
        raise ConfigError(f"unknown item format {format!r}")
    return _catalog(genres, ids, masks, titles)


class RatingMatrix:
    """Sparse ratings over contiguous user/item indices.

    Each stored rating is one "record"; ``users[r]``, ``items[r]`` and
    ``ratings[r]`` describe record ``r``.  Row (per-user) and column
    (per-item) access both go through CSR structures.
    """

    def __init__(self, users, items, ratings, n_users, n_items, user_ids=None, item_ids=None):
        self.users = np.ascontiguousarray(users, dtype=np.int64)
        self.items = np.ascontiguousarray(items, dtype=np.int64)
        self.ratings = np.ascontiguousarray(ratings, dtype=np.float64)
        self.n_users = int(n_users)
        self.n_items = int(n_items)
        self.user_ids = (np.arange(self.n_users, dtype=np.int64) if user_ids is None
                         else np.asarray(user_ids, dtype=np.int64))
        self.item_ids = (np.arange(self.n_items, dtype=np.int64) if item_ids is None
                         else np.asarray(item_ids, dtype=np.int64))
        for a in (self.users, self.items, self.ratings):
            a.flags.writeable = False

        rec = np.arange(len(self.ratings))
        by_user = sp.csr_matrix((rec, (self.users, self.items)), shape=(self.n_users, self.n_items))
        by_user.sort_indices()
        self._row_ptr = by_user.indptr.astype(np.int64)
        self._row_rec = by_user.data.astype(np.int64)
        by_item = sp.csr_matrix((rec, (self.items, self.users)), shape=(self.n_items, self.n_users))
        by_item.sort_indices()
        self._col_ptr = by_item.indptr.astype(np.int64)
        self._col_rec = by_item.data.astype(np.int64)
        if by_user.nnz != len(self.ratings):
            raise ValidationError("duplicate (user, item) pair in ratings")

        self.user_counts = np.diff(self._row_ptr)
        self.item_counts = np.diff(self._col_ptr)
        sums_u = np.bincount(self.users, weights=self.ratings, minlength=self.n_users)
        sums_i = np.bincount(self.items, weights=self.ratings, minlength=self.n_items)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.user_means = np.where(self.user_counts > 0, sums_u / np.maximum(self.user_counts, 1), 0.0)
            self.item_means = np.where(self.item_counts > 0, sums_i / np.maximum(self.item_counts, 1), 0.0)
        self._csr = None

    def __len__(self):
        return len(self.ratings)

    def __repr__(self):
        return f"RatingMatrix({self.n_users} users x {self.n_items} items, {len(self)} ratings)"

    @property
    def shape(self):
        return self.n_users, self.n_items

    def user_records(self, u: int) -> np.ndarray:
        """Record indices of user ``u``, ordered by item index."""
        return self._row_rec[self._row_ptr[u]:self._row_ptr[u + 1]]

    def item_records(self, i: int) -> np.ndarray:
        return self._col_rec[self._col_ptr[i]:self._col_ptr[i + 1]]

    def user_items(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        rec = self.user_records(u)
        return self.items[rec], self.ratings[rec]

    def item_users(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        rec = self.item_records(i)
        return self.users[rec], self.ratings[rec]

    def csr(self) -> sp.csr_matrix:
        """User x item ratings as a (cached) CSR matrix with sorted indices."""
        if self._csr is None:
            m = sp.csr_matrix((self.ratings, (self.users, self.items)), shape=self.shape)
            m.sort_indices()
            self._csr = m
        return self._csr

    def dense(self) -> np.ndarray:
        return self.csr().toarray()

    def subset(self, records: np.ndarray) -> "RatingMatrix":
        """A matrix over the same index space holding only ``records``."""
        records = np.sort(np.asarray(records, dtype=np.int64))
        return RatingMatrix(self.users[records], self.items[records], self.ratings[records],
                            self.n_users, self.n_items, self.user_ids, self.item_ids)

    def user_index(self, user_id: int) -> int:
        k = int(np.searchsorted(self.user_ids, user_id))
        if k >= self.n_users or self.user_ids[k] != user_id:
            raise KeyError(f"unknown user id {user_id}")
        return k

    def item_index(self, item_id: int) -> int:
        k = int(np.searchsorted(self.item_ids, item_id))
        if k >= self.n_items or self.item_ids[k] != item_id:
            raise KeyError(f"unknown item id {item_id}")
        return k

    def to_records(self) -> list[RatingRecord]:
        return [RatingRecord(int(self.user_ids[u]), int(self.item_ids[i]), int(r))
                for u, i, r in zip(self.users, self.items, self.ratings)]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for a in (self.users, self.items, self.ratings):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(np.array([self.n_users, self.n_items]).tobytes())
        return h.hexdigest()[:16]


def reindex(records: Sequence[RatingRecord]) -> RatingMatrix:
    """Map external ids to contiguous indices, sorted by external id."""
    if len(records) == 0:
        return RatingMatrix([], [], [], 0, 0, [], [])
    uid = np.fromiter((r.user_id for r in records), dtype=np.int64, count=len(records))
    iid = np.fromiter((r.item_id for r in records), dtype=np.int64, count=len(records))
    val = np.fromiter((r.rating for r in records), dtype=np.float64, count=len(records))
    user_ids, users = np.unique(uid, return_inverse=True)
    item_ids, items = np.unique(iid, return_inverse=True)
    key = users.astype(np.int64) * len(item_ids) + items
    uniq, counts = np.unique(key, return_counts=True)
    if np.any(counts > 1):
        k = uniq[np.argmax(counts > 1)]
        raise ValidationError(
            f"duplicate rating for user {user_ids[k // len(item_ids)]}, item {item_ids[k % len(item_ids)]}"
        )
    return RatingMatrix(users, items, val, len(user_ids), len(item_ids), user_ids, item_ids)


@dataclass(frozen=True)
class FoldSpec:
    k: int
    seed: int
    folds: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __len__(self):
        return self.k

    def __iter__(self):
        return iter(self.folds)

    def digest(self) -> str:
        h = hashlib.sha256()
        for train, probe in self.folds:
            h.update(train.tobytes())
            h.update(b"|")
            h.update(probe.tobytes())
        return h.hexdigest()


def kfold_split(matrix: RatingMatrix, k: int = 4, seed: int = 0) -> FoldSpec:
    """Per-user stratified k-fold split over rating records.

    Each user's records are shuffled and dealt round-robin into the k folds.
    Users with fewer than ``k`` ratings never enter a probe set.
    """
    if k < 2:
        raise ConfigError(f"fold count must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    assign = np.full(len(matrix), -1, dtype=np.int64)
    for u in range(matrix.n_users):
        rec = matrix.user_records(u)
        if len(rec) < k:
            continue
        perm = rng.permutation(len(rec))
        # random starting fold so remainders don't always land in the first folds
        offset = int(rng.integers(k))
        assign[rec[perm]] = (np.arange(len(rec)) + offset) % k
    everything = np.arange(len(matrix), dtype=np.int64)
    folds = []
    for f in range(k):
        probe = everything[assign == f]
        train = everything[assign != f]
        folds.append((train, probe))
    return FoldSpec(k, seed, tuple(folds))


def load_dataset(path, format: str = "ml100k", scale: RatingScale = RatingScale()):
    """Load ratings and catalog from a MovieLens directory.

    Returns ``(matrix, catalog)``.
    """
    path = Path(path)
    if format == "ml100k":
        records = parse_ml100k_ratings(path / "u.data", scale)
        catalog = parse_items(path / "u.item", "ml100k")
    elif format == "ml1m":
        records = parse_ml1m_ratings(path / "ratings.dat", scale)
        catalog = parse_items(path / "movies.dat", "ml1m")
    else:
        raise ConfigError(f"unknown dataset format {format!r}")
    return reindex(records), catalog
