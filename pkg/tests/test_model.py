import itertools
import math

import numpy as np
import pytest

from oracles import central_diff, rel_error
from tgclust import losses as L
from tgclust.batching import TrainingItem, materialize_batch
from tgclust.evaluation import accuracy, kmeans
from tgclust.features import PretrainConfig, pretrain_features, random_features
from tgclust.graph import build_graph
from tgclust.io import SyntheticSpec, generate_synthetic
from tgclust.memory import MemoryAccountant
from tgclust.model import (
    LOG_COLUMNS,
    SparseAdam,
    TrainConfig,
    TrainingError,
    base_loss,
    batch_objective,
    score,
    train,
)

TOL = 1e-4


class TestScore:
    def test_identical(self):
        assert score([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_unit(self):
        assert score([1.0, 0.0], [0.0, 0.0]) == -1.0

    def test_half_life_history(self):
        delta, t = 0.7, 4.0
        s = score([1.0, 0.0], [0.0, 0.0], [[1.0, 0.0]], [t - math.log(2) / delta], t, delta)
        assert s == pytest.approx(-1.5)

    def test_dot_mode(self):
        assert score([1.0, 2.0], [3.0, 1.0], [[1.0, 1.0]], [0.0], 0.0, mode="dot") == 5 + 4


class TestBaseLoss:
    def test_two_ln2(self):
        Z = np.zeros((3, 2))
        item = TrainingItem(0, 1, 1.0, [], [2])
        assert base_loss(item, Z)[0] == pytest.approx(2 * math.log(2))

    def test_saturated(self):
        Z = np.array([[10.0], [10.0], [-10.0]])
        loss, _ = base_loss(TrainingItem(0, 1, 0.0, [], [2]), Z, mode="dot")
        assert 0.0 <= loss < 1e-40
        # the distance score is capped at 0, so the positive term is at least ln 2
        assert base_loss(TrainingItem(0, 1, 0.0, [], [2]), np.array([[0.0], [0.0], [50.0]]))[0] \
            == pytest.approx(math.log(2))

    def test_matches_scorer(self, rng):
        Z = rng.normal(size=(6, 3))
        item = TrainingItem(0, 1, 5.0, [(2, 1.0), (3, 4.5)], [4, 5, 4])
        hz, ht = Z[[2, 3]], [1.0, 4.5]
        sp = lambda x: math.log1p(math.exp(x))
        ref = sp(-score(Z[0], Z[1], hz, ht, 5.0, 0.3)) + sum(
            sp(score(Z[0], Z[n], hz, ht, 5.0, 0.3)) for n in (4, 5, 4))
        assert base_loss(item, Z, 0.3)[0] == pytest.approx(ref, rel=1e-13)

    @pytest.mark.parametrize("mode", ["distance", "dot"])
    def test_gradient(self, mode):
        gen = np.random.default_rng(11)
        for _ in range(20):
            N, d = int(gen.integers(3, 11)), int(gen.integers(1, 5))
            Z = gen.normal(scale=0.6, size=(N, d))
            u, v = gen.choice(N, 2, replace=False)
            hist = [(int(gen.integers(N)), float(t)) for t in sorted(gen.uniform(0, 3, gen.integers(0, 4)))]
            negs = [int(x) for x in gen.integers(0, N, int(gen.integers(1, 4)))]
            item = TrainingItem(int(u), int(v), 3.0, hist, negs)
            _, grads = base_loss(item, Z, 0.8, mode)
            dense = np.zeros_like(Z)
            for r, g in grads.items():
                dense[r] = g
            num = central_diff(lambda z: base_loss(item, z, 0.8, mode)[0], Z)
            assert rel_error(dense, num) < TOL
            touched = {u, v, *negs, *(h for h, _ in hist)}
            assert set(grads) == touched


def small_instance(gen, modules):
    N, K, d = int(gen.integers(4, 11)), int(gen.integers(1, 4)), int(gen.integers(1, 5))
    E = int(gen.integers(5, 20))
    data = [(int(gen.integers(N)), int(gen.integers(N)), float(t)) for t in gen.integers(0, 6, E)]
    g = build_graph(data, N)
    batch = materialize_batch(g, range(0, E), history_len=3, n_negatives=2, seed=int(gen.integers(100)))
    Z = gen.normal(scale=0.7, size=(N, d))
    X = gen.normal(scale=0.7, size=(N, d))
    C = gen.normal(size=(K, d))
    C_prev = C + gen.normal(scale=0.1, size=C.shape)
    P = L.target_distribution(L.soft_assignment(X, C))
    cfg = TrainConfig(modules=modules, n_clusters=K, weights=L.LossWeights(0.7, 1.3, 0.9, 1.1, 0.4))
    return batch, Z, X, P, C, C_prev, cfg


MODULE_SETS = [(), ("x",), ("d",), ("c",), ("b",), ("s",), ("x", "d"), ("x", "d", "c", "b", "s")]


@pytest.mark.parametrize("modules", MODULE_SETS, ids=lambda m: ",".join(m) or "base")
def test_combined_gradient(modules):
    gen = np.random.default_rng(len(modules) * 31 + 5)
    for _ in range(20):
        batch, Z, X, P, C, C_prev, cfg = small_instance(gen, modules)
        obj = batch_objective(batch, Z, cfg, X, P, C, C_prev)
        f_z = lambda z: batch_objective(batch, z, cfg, X, P, C, C_prev).total
        assert rel_error(obj.dense_grad(Z.shape[0]), central_diff(f_z, Z)) < TOL
        if L.CENTER_MODULES & set(modules):
            f_c = lambda c: batch_objective(batch, Z, cfg, X, P, c, C_prev).total
            assert rel_error(obj.grad_centers, central_diff(f_c, C)) < TOL
        else:
            assert obj.grad_centers is None


def test_components_sum_to_total(small_bundle):
    g = small_bundle.graph
    cfg = TrainConfig(epochs=1, batch_size=256, modules="x,d,c,b,s")
    _, trail = train(g, random_features(g.node_count, 8, seed=0), cfg, small_bundle.labeling)
    for row in trail.rows:
        assert list(row) == list(LOG_COLUMNS)
        parts = row["L_model"] + sum(row[c] for c in ("L_X", "L_D", "L_C", "L_B", "L_S"))
        assert parts == pytest.approx(row["total"], abs=1e-10 * max(1.0, abs(row["total"])))
    # the cross-batch term has no predecessor on the first batch of each epoch
    assert trail.rows[0]["L_B"] == 0.0 and trail.rows[1]["L_B"] > 0.0


def test_zero_epochs_returns_features(small_bundle):
    X = random_features(small_bundle.graph.node_count, 4, seed=1)
    Z, trail = train(small_bundle.graph, X, TrainConfig(epochs=0))
    assert np.array_equal(Z.data, X.data) and trail.rows == []


def test_only_touched_rows_change(small_bundle):
    g = small_bundle.graph
    X = random_features(g.node_count, 4, seed=1)
    Z, _ = train(g, X, TrainConfig(epochs=1, batch_size=5, modules="x"), max_batches=1)
    batch = materialize_batch(g, range(0, 5))
    touched = set(np.concatenate([batch.src, batch.dst, batch.negatives.ravel(),
                                  batch.hist_nodes[batch.hist_mask]]).tolist())
    changed = set(np.flatnonzero(np.any(Z.data != X.data, axis=1)).tolist())
    assert changed and changed <= touched


def test_deterministic(small_bundle):
    g = small_bundle.graph
    X = random_features(g.node_count, 6, seed=2)
    cfg = TrainConfig(epochs=2, batch_size=300, modules="x,d,c,b,s")
    a, la = train(g, X, cfg, small_bundle.labeling)
    b, lb = train(g, X, cfg, small_bundle.labeling)
    assert np.array_equal(a.data, b.data)
    assert la.losses().tolist() == lb.losses().tolist()


def test_prefetch_thread_gives_same_result(small_bundle, monkeypatch):
    g = small_bundle.graph
    X = random_features(g.node_count, 6, seed=2)
    cfg = TrainConfig(epochs=1, batch_size=300, modules="x,d")
    a, _ = train(g, X, cfg, small_bundle.labeling)
    monkeypatch.setenv("TGC_THREADS", "2")
    b, _ = train(g, X, cfg, small_bundle.labeling)
    assert np.array_equal(a.data, b.data)


def test_planted_two_partition_recovery():
    b = generate_synthetic(SyntheticSpec(N=40, K=2, E=2000, p_in=0.9, seed=1))
    X = pretrain_features(b.graph, PretrainConfig(dim=32, seed=0))
    Z, _ = train(b.graph, X, TrainConfig(epochs=5, batch_size=256))
    assert accuracy(b.labeling.labels, kmeans(Z.data, 2, seed=0).assignments) >= 0.95


def test_intra_closer_than_inter():
    wins = 0
    for seed in range(5):
        b = generate_synthetic(SyntheticSpec(N=40, K=2, E=2000, p_in=0.9, seed=seed))
        Z, _ = train(b.graph, random_features(40, 8, seed=seed), TrainConfig(epochs=5, batch_size=128, seed=seed))
        D = ((Z.data[:, None] - Z.data[None]) ** 2).sum(-1)
        same = b.labeling.labels[:, None] == b.labeling.labels[None]
        off = ~np.eye(40, dtype=bool)
        wins += D[same & off].mean() < D[~same].mean()
    assert wins >= 3


def test_center_modules_need_k(small_bundle):
    X = random_features(small_bundle.graph.node_count, 4)
    with pytest.raises(TrainingError, match="n_clusters"):
        train(small_bundle.graph, X, TrainConfig(epochs=1, modules="d"))


def test_feature_rows_must_match(small_bundle):
    with pytest.raises(TrainingError):
        train(small_bundle.graph, np.zeros((3, 2)), TrainConfig(epochs=1))


def test_non_finite_loss_aborts(small_bundle):
    X = random_features(small_bundle.graph.node_count, 4).data.copy()
    X[5] = 1e200
    with pytest.raises(TrainingError, match="batch 0"):
        train(small_bundle.graph, X, TrainConfig(epochs=1, modules="x"))


def test_config_validation():
    for bad in ({"decay": 0}, {"adam_beta1": 1.0}, {"batch_size": 0}, {"score_mode": "cos"},
                {"q_exponent": -2.0}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_sparse_adam_matches_dense_on_touched_rows(rng):
    shape = (6, 3)
    p_dense, p_sparse = rng.normal(size=shape), None
    p_sparse = p_dense.copy()
    dense = SparseAdam(shape, 0.01, 0.9, 0.999, 1e-8)
    sparse = SparseAdam(shape, 0.01, 0.9, 0.999, 1e-8)
    for _ in range(5):
        g = rng.normal(size=shape)
        dense.step(p_dense, g)
        sparse.step(p_sparse, g[np.arange(6)], np.arange(6))
    np.testing.assert_allclose(p_sparse, p_dense, rtol=1e-14)
    before = p_sparse.copy()
    sparse.step(p_sparse, np.ones((2, 3)), np.array([1, 4]))
    assert np.array_equal(np.flatnonzero(np.any(before != p_sparse, axis=1)), [1, 4])


def test_memory_accounting_recorded(small_bundle):
    acct = MemoryAccountant(small_bundle.graph.node_count)
    X = random_features(small_bundle.graph.node_count, 4)
    _, trail = train(small_bundle.graph, X, TrainConfig(epochs=1, modules="x,d"), small_bundle.labeling,
                     accountant=acct)
    assert trail.memory["peak_aux_bytes"] == acct.peak_aux_bytes > 0
    assert set(acct.persistent) == {"negative_sampler", "features", "target_distribution", "centers"}
