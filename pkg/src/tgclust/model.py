"""Hawkes-style temporal embedding model and the batch training loop.

An interaction ``(u, v, t)`` is scored against ``u``'s recent history
``{(h, t_h)}``::

    s(u, v, t) = sim(z_u, z_v) + sum_h exp(-delta (t - t_h)) * sim(z_h, z_v)

with ``sim`` the negative squared distance (default) or the dot product.
The model loss is the logistic loss on the positive pair plus one term per
negative. Clustering modules are added on top, and every step updates only
the embedding rows the batch touched.
"""

from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from tgclust import losses as L
from tgclust.batching import Batch, NegativeSampler, materialize_batch, schedule_batches
from tgclust.features import FeatureMatrix
from tgclust.graph import NodeLabeling, TemporalGraph
from tgclust.memory import MemoryAccountant

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "batch", "L_model", "L_X", "L_D", "L_C", "L_B", "L_S", "total")


class TrainingError(RuntimeError):
    pass


class TrainingTimeout(TrainingError):
    """Raised when a wall-clock deadline passes; carries the partial log."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


@dataclass
class EmbeddingTable:
    data: np.ndarray

    @property
    def shape(self):
        return self.data.shape


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 1024
    history_len: int = 5
    n_negatives: int = 5
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    decay: float = 1.0
    score_mode: str = "distance"
    modules: tuple = ()
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    n_clusters: int | None = None
    q_exponent: float = -0.5
    shrink: str = "all"
    contrast_eps: float = 1e-8
    contrast_guard: float = 1e-6
    kmeans_restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        self.modules = L.parse_modules(self.modules)
        if isinstance(self.weights, dict):
            self.weights = L.LossWeights(**self.weights)
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0 < self.adam_beta1 < 1 or not 0 < self.adam_beta2 < 1:
            raise ValueError("Adam betas must lie in (0, 1)")
        if not self.decay > 0:
            raise ValueError("decay must be positive")
        if self.score_mode not in ("distance", "dot"):
            raise ValueError(f"unknown score mode {self.score_mode!r}")
        if self.q_exponent not in (-0.5, -1.0):
            raise ValueError("q_exponent must be -0.5 or -1")


def score(z_u, z_v, hist_z=(), hist_t=(), t: float = 0.0, delta: float = 1.0,
          mode: str = "distance") -> float:
    """Conditional intensity score of one interaction (see module docstring)."""
    z_u = np.asarray(z_u, dtype=np.float64)
    z_v = np.asarray(z_v, dtype=np.float64)
    hist_z = np.asarray(hist_z, dtype=np.float64).reshape(-1, z_u.size)
    hist_t = np.asarray(hist_t, dtype=np.float64).reshape(-1)
    w = np.exp(-delta * (t - hist_t))
    if mode == "distance":
        return float(-np.sum((z_u - z_v) ** 2) - np.sum(w * np.sum((hist_z - z_v) ** 2, axis=1)))
    return float(z_u @ z_v + np.sum(w * (hist_z @ z_v)))


@njit(cache=True)
def _softplus(x):
    return max(x, 0.0) + np.log1p(np.exp(-abs(x)))


@njit(cache=True)
def _expit(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _pair_score(Z, u, x, hist, w, H, hw, dot):
    if dot:
        s = 0.0
        for j in range(Z.shape[1]):
            s += (Z[u, j] + hw[j]) * Z[x, j]
        return s
    s = 0.0
    for j in range(Z.shape[1]):
        diff = Z[u, j] - Z[x, j]
        s -= diff * diff
    for h in range(H):
        if w[h] != 0.0:
            acc = 0.0
            for j in range(Z.shape[1]):
                diff = Z[hist[h], j] - Z[x, j]
                acc += diff * diff
            s -= w[h] * acc
    return s


@njit(cache=True)
def _base_kernel(Z, src, dst, ts, hist_nodes, hist_times, hist_mask, negatives, decay, dot,
                 p_src, p_dst, p_hist, p_neg, G):
    """Model loss of a batch; gradients are accumulated into ``G`` at the
    given row positions. Items are processed in order."""
    B = src.size
    H = hist_nodes.shape[1]
    Q = negatives.shape[1]
    d = Z.shape[1]
    w = np.zeros(H)
    hw = np.zeros(d)
    T = np.zeros(d)
    total = 0.0
    for b in range(B):
        u = src[b]
        v = dst[b]
        hist = hist_nodes[b]
        W = 0.0
        hw[:] = 0.0
        for h in range(H):
            if hist_mask[b, h]:
                w[h] = np.exp(-decay * (ts[b] - hist_times[b, h]))
                W += w[h]
                for j in range(d):
                    hw[j] += w[h] * Z[hist[h], j]
            else:
                w[h] = 0.0

        s = _pair_score(Z, u, v, hist, w, H, hw, dot)
        total += _softplus(-s)
        a = -_expit(-s)
        A = a
        gv = G[p_dst[b]]
        for j in range(d):
            T[j] = a * Z[v, j]
            if dot:
                gv[j] += a * (Z[u, j] + hw[j])
            else:
                gv[j] += 2.0 * a * (Z[u, j] - Z[v, j] + hw[j] - W * Z[v, j])
        for q in range(Q):
            x = negatives[b, q]
            s = _pair_score(Z, u, x, hist, w, H, hw, dot)
            total += _softplus(s)
            g = _expit(s)
            A += g
            gx = G[p_neg[b, q]]
            for j in range(d):
                T[j] += g * Z[x, j]
                if dot:
                    gx[j] += g * (Z[u, j] + hw[j])
                else:
                    gx[j] += 2.0 * g * (Z[u, j] - Z[x, j] + hw[j] - W * Z[x, j])
        gu = G[p_src[b]]
        for j in range(d):
            if dot:
                gu[j] += T[j]
            else:
                gu[j] -= 2.0 * (A * Z[u, j] - T[j])
        for h in range(H):
            if hist_mask[b, h]:
                gh = G[p_hist[b, h]]
                for j in range(d):
                    if dot:
                        gh[j] += w[h] * T[j]
                    else:
                        gh[j] -= 2.0 * w[h] * (A * Z[hist[h], j] - T[j])
    return total


@njit(cache=True)
def _scatter_add(G, pos, vals, scale):
    for i in range(pos.size):
        for j in range(G.shape[1]):
            G[pos[i], j] += scale * vals[i, j]


def touched_rows(batch: Batch) -> np.ndarray:
    """Every embedding row a batch's loss can depend on, ascending."""
    return np.unique(np.concatenate([batch.src, batch.dst, batch.negatives.reshape(-1),
                                     batch.hist_nodes[batch.hist_mask]]))


def base_terms(Z: np.ndarray, batch: Batch, decay: float, mode: str, rows: np.ndarray, G: np.ndarray):
    """Model loss over a batch; adds its gradient into ``G`` (aligned with ``rows``)."""
    pos = np.searchsorted
    return _base_kernel(Z, batch.src, batch.dst, batch.ts, batch.hist_nodes, batch.hist_times,
                        batch.hist_mask, batch.negatives, float(decay), mode == "dot",
                        pos(rows, batch.src), pos(rows, batch.dst), pos(rows, batch.hist_nodes),
                        pos(rows, batch.negatives), G)


def base_loss(item, Z: np.ndarray, decay: float = 1.0, mode: str = "distance"):
    """Model loss of a single :class:`~tgclust.batching.TrainingItem`.

    Returns ``(loss, {row: gradient})`` over the rows the item touches.
    """
    hist = list(item.history)
    H = max(1, len(hist))
    hn = np.zeros((1, H), np.int64)
    ht = np.zeros((1, H))
    hm = np.zeros((1, H), bool)
    for k, (n, t) in enumerate(hist):
        hn[0, k], ht[0, k], hm[0, k] = n, t, True
    batch = Batch(0, 0, np.array([item.source]), np.array([item.target]), np.array([float(item.timestamp)]),
                  hn, ht, hm, np.array([list(item.negatives)], dtype=np.int64))
    rows = touched_rows(batch)
    G = np.zeros((rows.size, Z.shape[1]))
    value = base_terms(np.asarray(Z, dtype=np.float64), batch, decay, mode, rows, G)
    return value, {int(r): G[i] for i, r in enumerate(rows)}


@dataclass
class Objective:
    components: dict
    total: float
    rows: np.ndarray
    grad_rows: np.ndarray
    grad_centers: np.ndarray | None
    step_bytes: int = 0

    def dense_grad(self, N: int) -> np.ndarray:
        out = np.zeros((N, self.grad_rows.shape[1]))
        out[self.rows] = self.grad_rows
        return out


def batch_objective(batch: Batch, Z: np.ndarray, cfg: TrainConfig, X: np.ndarray | None = None,
                    P: np.ndarray | None = None, centers: np.ndarray | None = None,
                    centers_prev: np.ndarray | None = None,
                    accountant: MemoryAccountant | None = None) -> Objective:
    """Total loss of one batch and its gradients w.r.t. touched rows of ``Z``
    and the centers."""
    rows = touched_rows(batch)
    G = np.zeros((rows.size, Z.shape[1]))
    base = base_terms(Z, batch, cfg.decay, cfg.score_mode, rows, G)
    comps = {"L_model": base}
    for m in L.MODULES:
        comps[L.MODULE_NAMES[m]] = 0.0
    enabled = cfg.modules
    w = cfg.weights
    g_c = np.zeros_like(centers) if (centers is not None and L.CENTER_MODULES & set(enabled)) else None
    live = []

    if set(enabled) & {"x", "d", "s"}:
        nodes = batch.nodes()
        at = np.searchsorted(rows, nodes)
        z_b = Z[nodes]
        live.append(z_b)
        if "x" in enabled:
            if X is None:
                raise TrainingError("reconstruction module needs the initial features")
            val, g = L.reconstruction_loss(z_b, X[nodes])
            comps["L_X"] = val
            G[at] += w.x * g
        if "d" in enabled:
            if P is None or centers is None:
                raise TrainingError("distribution alignment needs centers and a target distribution")
            val, gz, gc = L.kl_alignment_loss(z_b, centers, P[nodes], cfg.q_exponent)
            comps["L_D"] = val
            G[at] += w.d * gz
            g_c += w.d * gc
            live.append(gz)
        if "s" in enabled:
            val, gz, gc = L.cluster_scaling_loss(z_b, centers, cfg.shrink)
            comps["L_S"] = val
            G[at] += w.s * gz
            g_c += w.s * gc
            live.append(gz)

    if "c" in enabled:
        zu, zv, zn = Z[batch.src], Z[batch.dst], Z[batch.negatives]
        val, _, gi, gj, gn, gc = L.contrastive_loss(zu, zv, zn, centers, w.tau,
                                                    cfg.contrast_eps, cfg.contrast_guard)
        comps["L_C"] = val
        _scatter_add(G, np.searchsorted(rows, batch.src), gi, w.c)
        _scatter_add(G, np.searchsorted(rows, batch.dst), gj, w.c)
        _scatter_add(G, np.searchsorted(rows, batch.negatives.reshape(-1)), gn.reshape(-1, Z.shape[1]), w.c)
        g_c += w.c * gc
        live += [zu, zv, zn, gn]

    if "b" in enabled:
        val, gc = L.cross_batch_loss(centers, centers_prev)
        comps["L_B"] = val
        g_c += w.b * gc

    total = L.total_loss(base, {m: comps[L.MODULE_NAMES[m]] for m in enabled}, w)
    step_bytes = 0
    if accountant is not None:
        step_bytes = accountant.observe(*batch.arrays(), rows, G, g_c, *live)
    return Objective(comps, total, rows, G, g_c, step_bytes)


class SparseAdam:
    """Adam whose moments are only read and written on the rows passed in."""

    def __init__(self, shape, lr, beta1, beta2, eps):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0

    def step(self, param: np.ndarray, grad: np.ndarray, rows: np.ndarray | None = None):
        """Update ``param`` in place; returns bytes of touched state gathered."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        if rows is None:
            self.m *= b1
            self.m += (1.0 - b1) * grad
            self.v *= b2
            self.v += (1.0 - b2) * grad * grad
            param -= lr_t * self.m / (np.sqrt(self.v) + self.eps)
            return 0
        m = b1 * self.m[rows] + (1.0 - b1) * grad
        v = b2 * self.v[rows] + (1.0 - b2) * grad * grad
        self.m[rows] = m
        self.v[rows] = v
        param[rows] -= lr_t * m / (np.sqrt(v) + self.eps)
        return int(m.nbytes + v.nbytes)


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    memory: dict = field(default_factory=dict)

    def losses(self, column: str = "total") -> np.ndarray:
        return np.array([r[column] for r in self.rows])

    def epoch_loss(self) -> list[float]:
        out: dict[int, float] = {}
        for r in self.rows:
            out[r["epoch"]] = out.get(r["epoch"], 0.0) + r["total"]
        return [out[k] for k in sorted(out)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
            writer.writeheader()
            for r in self.rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("TGC_THREADS", "1")))
    except ValueError:
        return 1


def train(g: TemporalGraph, features, cfg: TrainConfig | None = None,
          labeling: NodeLabeling | None = None, accountant: MemoryAccountant | None = None,
          max_batches: int | None = None, deadline: float | None = None):
    """Train embeddings batch by batch in time order.

    ``Z`` starts from ``features``. Every batch applies one Adam step to the
    touched embedding rows and, when a center module is enabled, to the
    cluster centers. Returns ``(EmbeddingTable, TrainLog)``.

    ``deadline`` is a ``time.perf_counter()`` value; passing it raises
    :class:`TrainingTimeout` between batches.
    """
    cfg = cfg or TrainConfig()
    X = np.asarray(getattr(features, "data", features), dtype=np.float64)
    N, d = X.shape
    if N != g.node_count:
        raise TrainingError(f"features have {N} rows but the graph has {g.node_count} nodes")
    Z = X.copy()
    trail = TrainLog()
    if cfg.epochs == 0 or g.num_interactions == 0:
        return EmbeddingTable(Z), trail

    enabled = set(cfg.modules)
    need_centers = bool(enabled & L.CENTER_MODULES)
    K = cfg.n_clusters or (labeling.K if labeling is not None else None)
    centers = P = None
    if need_centers:
        if K is None:
            raise TrainingError("center-based modules need n_clusters or a labeling")
        init = L.init_centers(X, K, seed=cfg.seed, exponent=cfg.q_exponent, restarts=cfg.kmeans_restarts)
        centers = init.centers
        if "d" in enabled:
            P = init.P

    sampler = NegativeSampler(g)
    opt_z = SparseAdam(Z.shape, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    opt_c = None
    if need_centers:
        opt_c = SparseAdam(centers.centers.shape, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    if accountant is not None:
        accountant.register("negative_sampler", sampler.cum)
        if "x" in enabled:
            accountant.register("features", X)
        if P is not None:
            accountant.register("target_distribution", P)
        if centers is not None:
            accountant.register("centers", centers.centers, opt_c.m, opt_c.v)

    spans = schedule_batches(g, cfg.batch_size)
    if max_batches is not None:
        spans = spans[:max_batches]
    pool = ThreadPoolExecutor(max_workers=1) if _threads() > 1 else None

    def load(epoch, b):
        return materialize_batch(g, spans[b], cfg.history_len, cfg.n_negatives, cfg.seed, epoch, b, sampler)

    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            if centers is not None:
                centers.reset_snapshot()
            pending = pool.submit(load, epoch, 0) if pool else None
            for b in range(len(spans)):
                batch = pending.result() if pool else load(epoch, b)
                if pool and b + 1 < len(spans):
                    pending = pool.submit(load, epoch, b + 1)
                obj = batch_objective(
                    batch, Z, cfg, X=X, P=P,
                    centers=None if centers is None else centers.centers,
                    centers_prev=None if centers is None else centers.snapshot_prev,
                    accountant=accountant,
                )
                if not np.isfinite(obj.total):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}: {obj.components}")
                state_bytes = opt_z.step(Z, obj.grad_rows, obj.rows)
                if accountant is not None:
                    accountant.peak_step_bytes = max(accountant.peak_step_bytes, obj.step_bytes + state_bytes)
                if centers is not None:
                    # the next batch compares against the centers this batch used
                    centers.snapshot()
                if obj.grad_centers is not None:
                    opt_c.step(centers.centers, obj.grad_centers)
                row = {"epoch": epoch, "batch": b, **obj.components, "total": obj.total}
                trail.rows.append(row)
                if deadline is not None and time.perf_counter() > deadline:
                    trail.epoch_seconds.append(time.perf_counter() - t0)
                    if accountant is not None:
                        trail.memory = accountant.summary()
                    raise TrainingTimeout(f"deadline passed at epoch {epoch}, batch {b}", trail)
            trail.epoch_seconds.append(time.perf_counter() - t0)
            log.debug("epoch %d: loss %.6g (%.2fs)", epoch, sum(r["total"] for r in trail.rows
                                                                if r["epoch"] == epoch),
                      trail.epoch_seconds[-1])
    finally:
        if pool:
            pool.shutdown()
    if not np.all(np.isfinite(Z)):
        raise TrainingError("training produced non-finite embeddings")
    if accountant is not None:
        trail.memory = accountant.summary()
    return EmbeddingTable(Z), trail
