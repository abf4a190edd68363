"""Initial node features: generated (random, one-hot, positional) or
pre-trained with biased second-order random walks and skip-gram."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

from tgclust.graph import TemporalGraph

log = logging.getLogger(__name__)

ONE_HOT_GUARD = 100_000

KINDS = ("random", "one_hot", "positional", "pretrained", "loaded")


class FeatureError(ValueError):
    pass


@dataclass
class FeatureMatrix:
    data: np.ndarray
    kind: str = "loaded"

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise FeatureError("feature matrix must be two-dimensional")
        if self.kind not in KINDS:
            raise FeatureError(f"unknown feature kind {self.kind!r}")
        if not np.all(np.isfinite(self.data)):
            raise FeatureError("feature matrix contains non-finite entries")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.data.shape[0]


def random_features(N: int, d: int, seed: int = 0) -> FeatureMatrix:
    """I.i.d. uniform entries in ``[-0.5/d, 0.5/d]``."""
    if N < 1 or d < 1:
        raise FeatureError(f"need N >= 1 and d >= 1, got N={N}, d={d}")
    rng = np.random.default_rng(seed)
    return FeatureMatrix(rng.uniform(-0.5 / d, 0.5 / d, size=(N, d)), "random")


def one_hot(N: int, guard: int = ONE_HOT_GUARD) -> FeatureMatrix:
    if N < 1:
        raise FeatureError(f"need N >= 1, got {N}")
    if N > guard:
        raise FeatureError(
            f"one-hot features for N={N} need an N x N matrix "
            f"({N * N * 8 / 2**30:.1f} GiB); refusing above N={guard}"
        )
    return FeatureMatrix(np.eye(N), "one_hot")


def positional_encoding(N: int, d: int = 128) -> FeatureMatrix:
    """Sinusoidal encoding of node ids: sin on even columns, cos on odd."""
    if d < 2 or d % 2:
        raise FeatureError(f"positional encoding needs an even d >= 2, got {d}")
    i = np.arange(N, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    out = np.empty((N, d))
    out[:, 0::2] = np.sin(i / freq)
    out[:, 1::2] = np.cos(i / freq)
    return FeatureMatrix(out, "positional")


@dataclass
class PretrainConfig:
    dim: int = 128
    walks_per_node: int = 10
    walk_length: int = 80
    context_window: int = 10
    return_bias: float = 1.0  # p
    inout_bias: float = 1.0  # q
    negatives_per_positive: int = 5
    epochs: int = 1
    learning_rate: float = 0.025
    seed: int = 0

    def __post_init__(self):
        counts = ("walks_per_node", "walk_length", "context_window",
                  "negatives_per_positive", "epochs")
        for name in counts:
            if getattr(self, name) < 1:
                raise FeatureError(f"{name} must be >= 1")
        if self.dim < 2:
            raise FeatureError("dim must be >= 2")
        if self.return_bias <= 0 or self.inout_bias <= 0:
            raise FeatureError("walk biases p and q must be positive")


class _WalkGraph:
    """Weighted static projection: one edge per interacting pair, weight =
    number of interactions. Self-interactions are dropped."""

    def __init__(self, g: TemporalGraph):
        N = g.node_count
        keep = g.src != g.dst
        a = np.minimum(g.src[keep], g.dst[keep])
        b = np.maximum(g.src[keep], g.dst[keep])
        pair, weight = np.unique(a * N + b, return_counts=True)
        a, b = pair // N, pair % N
        rows = np.concatenate([a, b])
        cols = np.concatenate([b, a])
        w = np.concatenate([weight, weight]).astype(np.float64)
        order = np.lexsort((cols, rows))
        self.N = N
        self.cols = cols[order]
        self.keys = rows[order] * N + self.cols  # sorted, for adjacency tests
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=N))])
        self.cum = np.cumsum(w[order])
        self.strength = np.bincount(rows, weights=w, minlength=N)

    def has_edge(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        key = u * self.N + v
        pos = np.searchsorted(self.keys, key)
        pos = np.minimum(pos, self.keys.size - 1)
        return self.keys[pos] == key

    def step(self, cur: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """First-order weighted neighbor draw for every walker in ``cur``."""
        lo = self.indptr[cur]
        base = np.where(lo > 0, self.cum[lo - 1], 0.0)
        target = base + rng.random(cur.size) * self.strength[cur]
        pos = np.searchsorted(self.cum, target, side="right")
        pos = np.clip(pos, lo, self.indptr[cur + 1] - 1)
        return self.cols[pos]


def _walks(wg: _WalkGraph, starts: np.ndarray, cfg: PretrainConfig, rng) -> np.ndarray:
    L = cfg.walk_length
    walks = np.empty((starts.size, L), dtype=np.int64)
    walks[:, 0] = starts
    if L == 1:
        return walks
    walks[:, 1] = wg.step(starts, rng)
    inv_p, inv_q = 1.0 / cfg.return_bias, 1.0 / cfg.inout_bias
    top = max(inv_p, 1.0, inv_q)
    biased = not (inv_p == 1.0 and inv_q == 1.0)
    for s in range(2, L):
        prev, cur = walks[:, s - 2], walks[:, s - 1]
        nxt = wg.step(cur, rng)
        if biased:
            # rejection sampling against the second-order node2vec weights
            pending = np.arange(starts.size)
            while pending.size:
                x = nxt[pending]
                pv = prev[pending]
                alpha = np.where(x == pv, inv_p, np.where(wg.has_edge(pv, x), 1.0, inv_q))
                accept = rng.random(pending.size) * top < alpha
                pending = pending[~accept]
                if pending.size:
                    nxt[pending] = wg.step(cur[pending], rng)
        walks[:, s] = nxt
    return walks


def _context_pairs(walks: np.ndarray, window: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """(center, context) pairs with a per-position shrunk window, as in word2vec."""
    n, L = walks.shape
    reach = rng.integers(1, window + 1, size=(n, L))
    centers, contexts = [], []
    for o in range(1, min(window, L - 1) + 1):
        left, right = walks[:, :-o], walks[:, o:]
        fwd = reach[:, :-o] >= o
        bwd = reach[:, o:] >= o
        centers += [left[fwd], right[bwd]]
        contexts += [right[fwd], left[bwd]]
    if not centers:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


@njit(cache=True, fastmath=True)
def _sgns_pass(emb_in, emb_out, centers, contexts, negatives, lr0, done, total):
    """Sequential skip-gram negative-sampling SGD over one block of pairs.

    Returns the updated count of processed pairs (drives the linear decay).
    """
    d = emb_in.shape[1]
    Q = negatives.shape[1]
    grad_in = np.empty(d)
    for p in range(centers.size):
        lr = lr0 * max(1e-4, 1.0 - (done + p) / total)
        c = centers[p]
        ctx = contexts[p]
        grad_in[:] = 0.0
        for k in range(Q + 1):
            if k == 0:
                tgt = ctx
                label = 1.0
            else:
                tgt = negatives[p, k - 1]
                if tgt == ctx:
                    continue
                label = 0.0
            f = 0.0
            for j in range(d):
                f += emb_in[c, j] * emb_out[tgt, j]
            if f >= 0:
                sig = 1.0 / (1.0 + np.exp(-f))
            else:
                e = np.exp(f)
                sig = e / (1.0 + e)
            g = (label - sig) * lr
            for j in range(d):
                grad_in[j] += g * emb_out[tgt, j]
                emb_out[tgt, j] += g * emb_in[c, j]
        for j in range(d):
            emb_in[c, j] += grad_in[j]
    return done + centers.size


def pretrain_features(g: TemporalGraph, cfg: PretrainConfig | None = None) -> FeatureMatrix:
    """Static pre-training of node features by biased walks + skip-gram.

    Walks run on the weighted static projection of the interaction
    sequence with return bias ``p`` and in-out bias ``q``; the skip-gram
    objective with negative sampling (unigram^0.75 over walk occurrence,
    approximated by weighted degree and drawn from a lookup table) is optimized by sequential SGD with a
    linearly decaying step. Isolated nodes keep their random initial row.
    """
    cfg = cfg or PretrainConfig()
    if g.num_interactions == 0:
        raise FeatureError("cannot pre-train on a graph without interactions")
    N, d = g.node_count, cfg.dim
    rng = np.random.default_rng(cfg.seed)
    wg = _WalkGraph(g)
    emb_in = rng.uniform(-0.5 / d, 0.5 / d, size=(N, d))
    emb_out = np.zeros((N, d))

    active = np.flatnonzero(wg.strength > 0)
    isolated = N - active.size
    if isolated:
        log.info("%d isolated node(s) keep their random initialization", isolated)
    if active.size == 0:
        return FeatureMatrix(emb_in, "pretrained")

    noise = wg.strength ** 0.75
    table_size = max(10**6, 20 * N)
    bounds = np.round(np.cumsum(noise / noise.sum()) * table_size).astype(np.int64)
    noise_table = np.repeat(np.arange(N), np.diff(np.concatenate([[0], bounds])))
    Q = cfg.negatives_per_positive

    # walks are regenerated per epoch from a fixed stream so every epoch
    # sees the same corpus
    walk_seed = int(rng.integers(2**63))
    corpus_size = active.size * cfg.walks_per_node * cfg.walk_length
    total = float(cfg.epochs * corpus_size * (cfg.context_window + 1))
    done = 0
    for _ in range(cfg.epochs):
        walk_rng = np.random.default_rng(walk_seed)
        for _ in range(cfg.walks_per_node):
            starts = walk_rng.permutation(active)
            walks = _walks(wg, starts, cfg, walk_rng)
            centers, contexts = _context_pairs(walks, cfg.context_window, walk_rng)
            order = rng.permutation(centers.size)
            negatives = noise_table[rng.integers(0, noise_table.size, size=(centers.size, Q))]
            done = _sgns_pass(emb_in, emb_out, centers[order], contexts[order],
                              negatives, cfg.learning_rate, done, total)
    if not np.all(np.isfinite(emb_in)):
        raise FeatureError("pre-training diverged (non-finite embeddings)")
    return FeatureMatrix(emb_in, "pretrained")
