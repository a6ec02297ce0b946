import numpy as np
import pytest

from nemf.dataset import RatingRecord, reindex
from nemf.errors import ConfigError, DivergenceError
from nemf.explainability import ExplainConfig, build_user_style_E, normalize
from nemf.factorization import (FactorModel, TrainConfig, constraint_weights, init_model, objective,
                                rating_gradients, rating_loss, rmse, sgd_epoch, train)
from nemf.neighborhood import build_graph
from nemf.novelty import build_N_matrix

from conftest import random_records


def reference_mf(matrix, cfg):
    """Plain regularised MF by SGD, written independently in pure Python."""
    rng = np.random.default_rng(cfg.seed)
    P = rng.random((matrix.n_users, cfg.factors)) * cfg.init_scale
    Q = rng.random((matrix.n_items, cfg.factors)) * cfg.init_scale
    P, Q = P.tolist(), Q.tolist()
    states = []
    for _ in range(cfg.epochs):
        for r in rng.permutation(len(matrix)).tolist():
            u, i, y = int(matrix.users[r]), int(matrix.items[r]), float(matrix.ratings[r])
            pu, qi = P[u][:], Q[i][:]
            pred = 0.0
            for f in range(cfg.factors):
                pred += pu[f] * qi[f]
            e = y - pred
            P[u] = [pu[f] + cfg.lr * (2.0 * e * qi[f] - cfg.beta * pu[f]) for f in range(cfg.factors)]
            Q[i] = [qi[f] + cfg.lr * (2.0 * e * pu[f] - cfg.beta * qi[f]) for f in range(cfg.factors)]
        states.append((np.array(P), np.array(Q)))
    return states


def side_matrices(m, masks):
    cfg = ExplainConfig(k=5)
    E = normalize(build_user_style_E(m, build_graph(m, 5), cfg), cfg)
    return E, build_N_matrix(m, masks, "distance", normalize=True)


def test_zero_weights_match_reference_mf(small):
    m, masks = small
    E, N = side_matrices(m, masks)
    cfg = TrainConfig(factors=8, lr=0.01, epochs=3, seed=5)
    states = []
    train(m, E, N, cfg, callback=lambda ep, err, model: states.append((model.P.copy(), model.Q.copy())))
    for (P, Q), (rP, rQ) in zip(states, reference_mf(m, cfg)):
        assert np.array_equal(P, rP) and np.array_equal(Q, rQ)


def sample_points(rng, n, f=6):
    pts = []
    while len(pts) < n:
        u, v = rng.normal(size=f), rng.normal(size=f)
        if np.all(np.abs(u - v) > 1e-3):
            pts.append((u, v, float(rng.integers(1, 6)), float(rng.uniform(0, 2)), float(rng.uniform(0, 0.2))))
    return pts


def central_diff(fun, x, h=1e-6):
    g = np.empty_like(x)
    for k in range(len(x)):
        a, b = x.copy(), x.copy()
        a[k] += h
        b[k] -= h
        g[k] = (fun(a) - fun(b)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("norm", ["L1", "L2"])
def test_gradients_match_finite_differences(norm):
    rng = np.random.default_rng(1)
    worst = 0.0
    for u, v, r, w, beta in sample_points(rng, 300):
        gu, gv = rating_gradients(u, v, r, w, beta, norm)
        fu = central_diff(lambda x: rating_loss(x, v, r, w, beta, norm), u)
        fv = central_diff(lambda x: rating_loss(u, x, r, w, beta, norm), v)
        worst = max(worst, rel_err(gu, fu), rel_err(gv, fv))
    assert worst <= 1e-4


def one_step(cfg, u, v, r, w):
    m = reindex([RatingRecord(1, 1, int(r))])
    model = FactorModel(u[None, :].copy(), v[None, :].copy(), cfg)
    sgd_epoch(model, m, np.array([w]), np.array([0]))
    return model.P[0], model.Q[0]


@pytest.mark.parametrize("norm,mode", [("L2", "printed"), ("L1", "gradient")])
def test_kernel_step_is_gradient_step(norm, mode):
    rng = np.random.default_rng(2)
    for u, v, r, w, beta in sample_points(rng, 50):
        cfg = TrainConfig(factors=len(u), lr=0.01, beta=beta, norm=norm, l1_item_update=mode)
        P, Q = one_step(cfg, u, v, r, w)
        gu, gv = rating_gradients(u, v, r, w, beta, norm)
        assert np.allclose(P, u - 0.01 * gu, atol=1e-14)
        assert np.allclose(Q, v - 0.01 * gv, atol=1e-14)


def test_printed_l1_item_update_moves_with_user():
    rng = np.random.default_rng(3)
    for u, v, r, w, beta in sample_points(rng, 50):
        cfg = TrainConfig(factors=len(u), lr=0.01, beta=beta, norm="L1")
        P, Q = one_step(cfg, u, v, r, w)
        gu, gv = rating_gradients(u, v, r, 0.0, beta)
        pull = np.sign(u - v) * w
        assert np.allclose(P, u - 0.01 * (gu + pull), atol=1e-14)
        assert np.allclose(Q, v - 0.01 * (gv + pull), atol=1e-14)


def test_sign_of_zero_is_zero():
    u = np.array([0.5, 0.2])
    cfg = TrainConfig(factors=2, lr=0.1, beta=0.0, norm="L1")
    P, Q = one_step(cfg, u, u.copy(), 0.0, 10.0)
    gu, gv = rating_gradients(u, u, 0.0, 0.0, 0.0)
    assert np.allclose(P, u - 0.1 * gu) and np.allclose(Q, u - 0.1 * gv)


def test_training_is_deterministic(small):
    m, masks = small
    E, N = side_matrices(m, masks)
    cfg = TrainConfig(factors=6, lr=0.01, lam=0.5, delta=0.3, epochs=4, seed=11)
    a, b = train(m, E, N, cfg), train(m, E, N, cfg)
    assert np.array_equal(a.P, b.P) and np.array_equal(a.Q, b.Q) and a.log == b.log
    c = train(m, E, N, TrainConfig(factors=6, lr=0.01, lam=0.5, delta=0.3, epochs=4, seed=12))
    assert not np.array_equal(a.P, c.P)


def test_mf_lowers_objective(small):
    m, _ = small
    cfg = TrainConfig(factors=6, lr=0.01, epochs=30, seed=1)
    model = train(m, cfg=cfg)
    start = init_model(cfg, m.n_users, m.n_items)
    assert objective(model, m) < objective(start, m)
    assert model.log[-1] < model.log[0]
    assert rmse(model, m) == pytest.approx(model.log[-1])


def test_constraint_weights(small):
    m, masks = small
    E, N = side_matrices(m, masks)
    w = constraint_weights(m, E, N, TrainConfig(lam=0.3, delta=0.7))
    want = 0.3 * E.values_at(m.users, m.items) + 0.7 * N.values_at(m.users, m.items)
    assert np.allclose(w, want)
    assert not constraint_weights(m, E, N, TrainConfig()).any()


def test_divergence_is_reported(small):
    m, _ = small
    with pytest.raises(DivergenceError) as err:
        train(m, cfg=TrainConfig(factors=4, lr=5.0, epochs=50, init_scale=1.0))
    assert err.value.epoch >= 1


def test_save_load(small, tmp_path):
    m, _ = small
    model = train(m, cfg=TrainConfig(factors=4, lr=0.01, epochs=2))
    model.save(tmp_path / "m.npz")
    back = FactorModel.load(tmp_path / "m.npz")
    assert np.array_equal(back.P, model.P) and back.config == model.config and back.log == model.log
    assert back.predict(1, 2) == pytest.approx(float(model.P[1] @ model.Q[2]))
    with pytest.raises(IndexError):
        back.predict(m.n_users, 0)


@pytest.mark.parametrize("bad", [dict(factors=0), dict(lr=0), dict(lam=-1), dict(norm="L3"),
                                 dict(epochs=0), dict(l1_item_update="x"), dict(init_scale=-1)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad)


def test_tolerance_stops_early():
    m = reindex(random_records(10, 10, seed=1))
    model = train(m, cfg=TrainConfig(factors=3, lr=0.01, epochs=500, tol=1e3))
    assert len(model.log) == 2


def test_hand_computed_step():
    # e = 3 - 0.5 = 2.5; P = u + 0.1 * 5 * v; Q = v + 0.1 * 5 * u
    cfg = TrainConfig(factors=2, lr=0.1, beta=0.0)
    P, Q = one_step(cfg, np.array([1.0, 0.0]), np.array([0.5, 0.5]), 3, 0.0)
    assert P.tolist() == [1.25, 0.25] and Q.tolist() == [1.0, 0.5]
    # L1 pull of weight 2 shifts both vectors by -lr * sgn(u - v) * w
    cfg = TrainConfig(factors=2, lr=0.1, beta=0.0, norm="L1")
    P, Q = one_step(cfg, np.array([1.0, 0.0]), np.array([0.5, 0.5]), 3, 2.0)
    assert np.allclose(P, [1.05, 0.45]) and np.allclose(Q, [0.8, 0.7])


def test_early_descent_on_ml100k(ml100k_path):
    from nemf.dataset import kfold_split, load_dataset
    m, _ = load_dataset(ml100k_path)
    for train_idx, _ in list(kfold_split(m, 4, 0))[:2]:
        model = train(m.subset(train_idx), cfg=TrainConfig(epochs=5))
        assert all(b <= a for a, b in zip(model.log, model.log[1:]))
