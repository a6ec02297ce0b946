"""SGD matrix factorisation with explainability and novelty constraints.

Per observed rating ``r`` of user ``i`` on item ``j`` the loss is::

    (r - u.v)^2 + beta/2 (|u|^2 + |v|^2) + w * D(u, v)
    w = lam * E[i, j] + delta * N[i, j]

with ``D = |u - v|_1`` (``norm="L1"``) or ``D = |u - v|_2^2 / 2``
(``norm="L2"``).  ``lam = delta = 0`` is plain regularised MF, ``delta = 0``
is explainable MF, ``lam = 0`` is novelty MF.  No bias terms.

The L1 item update comes in two flavours.  ``l1_item_update="printed"``
(default) moves the item vector by ``-sgn(u - v) * w``, the same direction as
the user vector, exactly as the published update rules read.
``"gradient"`` uses ``+sgn(u - v) * w``, the true negative gradient of the
loss above, which pulls the two vectors together.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .dataset import RatingMatrix
from .errors import ConfigError, DivergenceError

NORMS = ("L1", "L2")


@dataclass(frozen=True)
class TrainConfig:
    factors: int = 80
    lr: float = 0.001
    beta: float = 0.02
    lam: float = 0.0
    delta: float = 0.0
    norm: str = "L1"
    epochs: int = 100
    seed: int = 0
    init_scale: float = 0.1
    tol: float | None = None
    l1_item_update: str = "printed"

    def __post_init__(self):
        if self.factors < 1:
            raise ConfigError(f"factors must be >= 1, got {self.factors}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if self.beta < 0 or self.lam < 0 or self.delta < 0:
            raise ConfigError("beta, lam and delta must be non-negative")
        if self.norm not in NORMS:
            raise ConfigError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.l1_item_update not in ("gradient", "printed"):
            raise ConfigError(f"l1_item_update must be 'gradient' or 'printed', got {self.l1_item_update!r}")
        if self.init_scale < 0:
            raise ConfigError("init_scale must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class FactorModel:
    P: np.ndarray
    Q: np.ndarray
    config: TrainConfig
    log: list = field(default_factory=list)

    @property
    def n_users(self):
        return self.P.shape[0]

    @property
    def n_items(self):
        return self.Q.shape[0]

    @property
    def factors(self):
        return self.P.shape[1]

    def predict(self, u: int, i: int) -> float:
        return predict(self, u, i)

    def scores(self, u: int) -> np.ndarray:
        """Predicted scores of user ``u`` for every item."""
        return self.Q @ self.P[u]

    def save(self, path):
        np.savez(path, P=self.P, Q=self.Q, config=json.dumps(self.config.to_dict()),
                 log=np.asarray(self.log, dtype=np.float64))

    @classmethod
    def load(cls, path) -> "FactorModel":
        with np.load(path, allow_pickle=False) as z:
            cfg = TrainConfig(**json.loads(str(z["config"])))
            return cls(z["P"].copy(), z["Q"].copy(), cfg, z["log"].tolist())


def init_model(cfg: TrainConfig, n_users: int, n_items: int, rng=None) -> FactorModel:
    """Uniform ``[0, init_scale)`` factors drawn from a seeded generator."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    P = rng.random((n_users, cfg.factors)) * cfg.init_scale
    Q = rng.random((n_items, cfg.factors)) * cfg.init_scale
    return FactorModel(P, Q, cfg)


def predict(model: FactorModel, u: int, i: int) -> float:
    if not (0 <= u < model.n_users) or not (0 <= i < model.n_items):
        raise IndexError(f"(user {u}, item {i}) outside model of shape {model.n_users}x{model.n_items}")
    return float(_dot(model.P[u], model.Q[i]))


@numba.njit(cache=True)
def _dot(a, b):
    s = 0.0
    for f in range(a.shape[0]):
        s += a[f] * b[f]
    return s


@numba.njit(cache=True)
def _sign(x):
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


@numba.njit(cache=True, nogil=True)
def _epoch(P, Q, users, items, ratings, weights, order, lr, beta, l1, item_sign):
    nf = P.shape[1]
    pu = np.empty(nf)
    qi = np.empty(nf)
    for t in range(order.shape[0]):
        r = order[t]
        u = users[r]
        i = items[r]
        for f in range(nf):
            pu[f] = P[u, f]
            qi[f] = Q[i, f]
        e = ratings[r] - _dot(pu, qi)
        w = weights[r]
        if w == 0.0:
            for f in range(nf):
                P[u, f] = pu[f] + lr * (2.0 * e * qi[f] - beta * pu[f])
                Q[i, f] = qi[f] + lr * (2.0 * e * pu[f] - beta * qi[f])
        elif l1:
            for f in range(nf):
                c = _sign(pu[f] - qi[f]) * w
                P[u, f] = pu[f] + lr * (2.0 * e * qi[f] - beta * pu[f] - c)
                Q[i, f] = qi[f] + lr * (2.0 * e * pu[f] - beta * qi[f] + item_sign * c)
        else:
            for f in range(nf):
                c = (pu[f] - qi[f]) * w
                P[u, f] = pu[f] + lr * (2.0 * e * qi[f] - beta * pu[f] - c)
                Q[i, f] = qi[f] + lr * (2.0 * e * pu[f] - beta * qi[f] + c)


@numba.njit(cache=True)
def _sse(P, Q, users, items, ratings):
    s = 0.0
    for r in range(ratings.shape[0]):
        e = ratings[r] - _dot(P[users[r]], Q[items[r]])
        s += e * e
    return s


def constraint_weights(matrix: RatingMatrix, E=None, N=None, cfg: TrainConfig = TrainConfig()) -> np.ndarray:
    """Per-record ``lam * E + delta * N``, zero where a side matrix is absent."""
    w = np.zeros(len(matrix))
    if E is not None and cfg.lam > 0:
        w += cfg.lam * E.values_at(matrix.users, matrix.items)
    if N is not None and cfg.delta > 0:
        w += cfg.delta * N.values_at(matrix.users, matrix.items)
    return w


def rating_gradients(u, v, rating, weight, beta, norm="L1"):
    """Gradient of one rating's loss terms with respect to ``u`` and ``v``."""
    e = rating - float(np.dot(u, v))
    diff = u - v
    pull = np.sign(diff) * weight if norm == "L1" else diff * weight
    gu = -2.0 * e * v + beta * u + pull
    gv = -2.0 * e * u + beta * v - pull
    return gu, gv


def rating_loss(u, v, rating, weight, beta, norm="L1"):
    e = rating - float(np.dot(u, v))
    diff = u - v
    d = np.abs(diff).sum() if norm == "L1" else 0.5 * float(diff @ diff)
    return e * e + 0.5 * beta * (float(u @ u) + float(v @ v)) + weight * d


def objective(model: FactorModel, matrix: RatingMatrix, E=None, N=None, cfg: TrainConfig | None = None) -> float:
    """Full training loss summed over the observed ratings of ``matrix``."""
    cfg = cfg or model.config
    w = constraint_weights(matrix, E, N, cfg)
    total = 0.0
    for r in range(len(matrix)):
        total += rating_loss(model.P[matrix.users[r]], model.Q[matrix.items[r]],
                             matrix.ratings[r], w[r], cfg.beta, cfg.norm)
    return total


def rmse(model: FactorModel, matrix: RatingMatrix) -> float:
    if len(matrix) == 0:
        return 0.0
    return math.sqrt(_sse(model.P, model.Q, matrix.users, matrix.items, matrix.ratings) / len(matrix))


def sgd_epoch(model: FactorModel, matrix: RatingMatrix, weights: np.ndarray, order: np.ndarray, epoch: int = 1) -> float:
    """One pass over ``matrix`` in ``order``; updates the model in place.

    User and item vectors are updated simultaneously from their pre-update
    values.  Returns the training RMSE after the pass.
    """
    cfg = model.config
    _epoch(model.P, model.Q, matrix.users, matrix.items, matrix.ratings,
           np.ascontiguousarray(weights, dtype=np.float64), np.ascontiguousarray(order, dtype=np.int64),
           cfg.lr, cfg.beta, cfg.norm == "L1", 1.0 if cfg.l1_item_update == "gradient" else -1.0)
    if not (np.isfinite(model.P).all() and np.isfinite(model.Q).all()):
        raise DivergenceError(epoch)
    err = rmse(model, matrix)
    model.log.append(err)
    return err


def train(matrix: RatingMatrix, E=None, N=None, cfg: TrainConfig = TrainConfig(), callback=None) -> FactorModel:
    """Train a factor model on the ratings of ``matrix``.

    ``E`` and ``N`` are normalised side matrices (or ``None``).  The random
    stream of ``cfg.seed`` draws the initial factors and then one shuffle per
    epoch, so a run is fully determined by (data, cfg).
    """
    rng = np.random.default_rng(cfg.seed)
    model = init_model(cfg, matrix.n_users, matrix.n_items, rng)
    weights = constraint_weights(matrix, E, N, cfg)
    prev = None
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(matrix))
        err = sgd_epoch(model, matrix, weights, order, epoch)
        if callback is not None:
            callback(epoch, err, model)
        if cfg.tol is not None and prev is not None and abs(prev - err) < cfg.tol:
            break
        prev = err
    return model
