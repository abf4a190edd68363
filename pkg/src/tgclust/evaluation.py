"""Two-step clustering evaluation: K-means on embeddings, then external
metrics (ACC, NMI, ARI, macro-F1) against ground-truth labels."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import sparse
from scipy.optimize import linear_sum_assignment

log = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centers: np.ndarray
    inertia: float
    iterations: int
    inertia_path: list = field(default_factory=list, repr=False)
    restart_inertias: list = field(default_factory=list, repr=False)


def _sq_dists(X: np.ndarray, C: np.ndarray, x_sq: np.ndarray) -> np.ndarray:
    d = X @ C.T
    d *= -2.0
    d += x_sq[:, None]
    d += np.einsum("ij,ij->i", C, C)[None, :]
    return np.maximum(d, 0.0, out=d)


@njit(cache=True)
def _inertia(X, C, assign):
    total = 0.0
    for i in range(X.shape[0]):
        c = assign[i]
        for j in range(X.shape[1]):
            r = X[i, j] - C[c, j]
            total += r * r
    return total


def _center_sums(X: np.ndarray, assign: np.ndarray, K: int) -> np.ndarray:
    N = assign.size
    ind = sparse.csr_matrix((np.ones(N), (assign, np.arange(N))), shape=(K, N))
    return np.asarray(ind @ X)


def _kmeans_pp(X, K, x_sq, rng) -> np.ndarray:
    N = X.shape[0]
    chosen = [int(rng.integers(N))]
    closest = _sq_dists(X, X[chosen], x_sq)[:, 0]
    for _ in range(1, K):
        total = closest.sum()
        if total <= 0:
            # every point coincides with a chosen seed
            remaining = np.setdiff1d(np.arange(N), chosen)
            idx = int(rng.choice(remaining))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, N - 1)
        chosen.append(idx)
        closest = np.minimum(closest, _sq_dists(X, X[[idx]], x_sq)[:, 0])
    return X[chosen].copy()


def _repair_empty(assign: np.ndarray, dist: np.ndarray, K: int) -> np.ndarray:
    """Give each empty cluster the point farthest from its current center."""
    counts = np.bincount(assign, minlength=K)
    for k in np.flatnonzero(counts == 0):
        own = dist[np.arange(assign.size), assign].copy()
        own[counts[assign] <= 1] = -1.0  # never empty another cluster
        i = int(np.argmax(own))
        counts[assign[i]] -= 1
        assign[i] = k
        counts[k] = 1
        dist[i, k] = 0.0
    return assign


def _lloyd(X, centers, x_sq, max_iter, tol):
    K = centers.shape[0]
    path = []
    it = 0
    for it in range(1, max_iter + 1):
        dist = _sq_dists(X, centers, x_sq)
        assign = _repair_empty(np.argmin(dist, axis=1), dist, K)
        counts = np.bincount(assign, minlength=K)
        new = _center_sums(X, assign, K) / counts[:, None]
        shift = float(((new - centers) ** 2).sum())
        centers = new
        path.append(float(_inertia(X, centers, assign)))
        if shift <= tol:
            break
    return assign, centers, it, path


def kmeans(points, K: int, seed: int = 0, restarts: int = 10, max_iter: int = 300,
           tol: float = 1e-6) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding, best of ``restarts`` by inertia.

    Convergence is declared when the squared center shift drops below
    ``tol`` times the mean per-feature variance of the data.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise EvaluationError("points must be a 2-D array")
    N = X.shape[0]
    if not 1 <= K <= N:
        raise EvaluationError(f"need 1 <= K <= N, got K={K}, N={N}")
    rng = np.random.default_rng(seed)
    x_sq = np.einsum("ij,ij->i", X, X)
    scaled_tol = tol * float(np.mean(np.var(X, axis=0))) if N > 1 else 0.0
    best = None
    tried = []
    for _ in range(max(1, restarts)):
        init = _kmeans_pp(X, K, x_sq, rng)
        assign, centers, it, path = _lloyd(X, init, x_sq, max_iter, scaled_tol)
        inertia = float(_inertia(X, centers, assign))
        tried.append(inertia)
        if best is None or inertia < best.inertia:
            best = KMeansResult(assign, centers, inertia, it, path)
    best.restart_inertias = tried
    return best


def hungarian(cost) -> np.ndarray:
    """Minimum-cost permutation ``perm`` (row ``k`` -> column ``perm[k]``).

    Among optimal permutations the lexicographically smallest one is returned.
    """
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise EvaluationError(f"cost matrix must be square, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise EvaluationError("cost matrix must be finite")
    K = C.shape[0]
    if K == 0:
        return np.zeros(0, dtype=np.int64)

    def optimum(rows, cols):
        if not rows:
            return 0.0
        sub = C[np.ix_(rows, cols)]
        r, c = linear_sum_assignment(sub)
        return float(sub[r, c].sum())

    best = optimum(list(range(K)), list(range(K)))
    tol = 1e-9 * max(1.0, float(np.abs(C).max()) * K)
    perm = np.empty(K, dtype=np.int64)
    free = list(range(K))
    spent = 0.0
    for row in range(K):
        for col in free:
            rest = [c for c in free if c != col]
            if spent + C[row, col] + optimum(list(range(row + 1, K)), rest) <= best + tol:
                perm[row] = col
                spent += C[row, col]
                free = rest
                break
    return perm


def _check_labels(truth, pred):
    t = np.asarray(truth, dtype=np.int64)
    p = np.asarray(pred, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise EvaluationError(f"label vectors differ in shape: {t.shape} vs {p.shape}")
    if t.size == 0:
        raise EvaluationError("empty label vectors")
    if t.min() < 0 or p.min() < 0:
        raise EvaluationError("labels must be non-negative")
    return t, p


def contingency(truth, pred, size: int | None = None) -> np.ndarray:
    """``M[a, b]`` = number of points with truth ``a`` and prediction ``b``."""
    t, p = _check_labels(truth, pred)
    rows = int(t.max()) + 1 if size is None else size
    cols = int(p.max()) + 1 if size is None else size
    return np.bincount(t * cols + p, minlength=rows * cols).reshape(rows, cols)


def cluster_mapping(truth, pred, K: int | None = None) -> np.ndarray:
    """Optimal map from predicted cluster id to truth label id.

    Predicted clusters are ordered by their contingency column before
    matching, so ties between optimal matchings are broken the same way
    whatever ids the clusters carry.
    """
    t, p = _check_labels(truth, pred)
    size = max(int(t.max()), int(p.max())) + 1
    if K is not None:
        size = max(size, K)
    M = contingency(t, p, size)
    canon = np.lexsort(-M[::-1])
    mapping = np.empty(size, dtype=np.int64)
    mapping[canon] = hungarian(-M[:, canon].T)
    return mapping


def accuracy(truth, pred, K: int | None = None) -> float:
    t, p = _check_labels(truth, pred)
    mapping = cluster_mapping(t, p, K)
    return float(np.mean(mapping[p] == t))


def _entropy(counts: np.ndarray, n: int) -> float:
    q = counts[counts > 0] / n
    return float(-(q * np.log(q)).sum())


def nmi(truth, pred) -> float:
    """Mutual information normalized by the geometric mean of the entropies."""
    t, p = _check_labels(truth, pred)
    _, t = np.unique(t, return_inverse=True)
    _, p = np.unique(p, return_inverse=True)
    M = contingency(t.reshape(-1), p.reshape(-1)).astype(np.float64)
    n = t.size
    h_t = _entropy(M.sum(axis=1), n)
    h_p = _entropy(M.sum(axis=0), n)
    if h_t == 0.0 or h_p == 0.0:
        return 1.0 if h_t == h_p else 0.0
    if np.count_nonzero(M) == M.shape[0] == M.shape[1]:
        return 1.0  # same partition up to relabeling; skip rounding
    joint = M[M > 0] / n
    outer = np.outer(M.sum(axis=1), M.sum(axis=0))[M > 0] / n**2
    mi = float((joint * np.log(joint / outer)).sum())
    return float(min(1.0, max(0.0, mi / np.sqrt(h_t * h_p))))


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1.0) / 2.0


def ari(truth, pred) -> float:
    t, p = _check_labels(truth, pred)
    if t.size < 2:
        raise EvaluationError("ARI needs at least two points")
    M = contingency(t, p)
    index = _comb2(M).sum()
    a = _comb2(M.sum(axis=1)).sum()
    b = _comb2(M.sum(axis=0)).sum()
    expected = a * b / _comb2(t.size)
    maximum = 0.5 * (a + b)
    if maximum == expected:
        # both partitions trivial (one cluster, or all singletons)
        return 1.0
    return float((index - expected) / (maximum - expected))


def f1_macro(truth, pred, K: int | None = None) -> float:
    """Per-class F1 after optimal cluster-to-label mapping, averaged over the
    truth classes."""
    t, p = _check_labels(truth, pred)
    mapped = cluster_mapping(t, p, K)[p]
    classes = np.unique(t)
    scores = []
    for c in classes:
        tp = np.sum((mapped == c) & (t == c))
        n_pred = np.sum(mapped == c)
        n_true = np.sum(t == c)
        scores.append(0.0 if tp == 0 else 2.0 * tp / (n_pred + n_true))
    return float(np.mean(scores))


METRICS = ("acc", "nmi", "ari", "f1")


@dataclass
class MetricsReport:
    acc: float
    nmi: float
    ari: float
    f1: float
    inertia: float = 0.0
    seed_count: int = 1
    std: dict = field(default_factory=dict)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.acc, self.nmi, self.ari, self.f1)


def score_partition(truth, pred, K: int | None = None) -> MetricsReport:
    return MetricsReport(accuracy(truth, pred, K), nmi(truth, pred), ari(truth, pred), f1_macro(truth, pred, K))


def evaluate(embeddings, labeling, K: int | None = None, seeds=(0, 1, 2, 3, 4),
             restarts: int = 10, max_iter: int = 300, tol: float = 1e-6) -> MetricsReport:
    """K-means once per seed, then the mean of each metric over seeds."""
    Z = np.asarray(getattr(embeddings, "data", embeddings), dtype=np.float64)
    truth = np.asarray(getattr(labeling, "labels", labeling), dtype=np.int64)
    if Z.shape[0] != truth.size:
        raise EvaluationError(f"{Z.shape[0]} embedding rows but {truth.size} labels")
    K = K if K is not None else getattr(labeling, "K", int(truth.max()) + 1)
    seeds = list(seeds)
    if not seeds:
        raise EvaluationError("need at least one seed")
    runs, inertias = [], []
    for s in seeds:
        res = kmeans(Z, K, seed=s, restarts=restarts, max_iter=max_iter, tol=tol)
        runs.append(score_partition(truth, res.assignments, K).as_tuple())
        inertias.append(res.inertia)
    runs = np.array(runs)
    mean, std = runs.mean(axis=0), runs.std(axis=0)
    same = np.all(runs == runs[0], axis=0)
    mean[same], std[same] = runs[0][same], 0.0
    report = MetricsReport(*map(float, mean), inertia=float(np.mean(inertias)), seed_count=len(seeds),
                           std=dict(zip(METRICS, map(float, std))))
    log.info("metrics over %d seed(s): %s (std %s)", len(seeds),
             dict(zip(METRICS, np.round(mean, 4))), dict(zip(METRICS, np.round(std, 4))))
    return report
