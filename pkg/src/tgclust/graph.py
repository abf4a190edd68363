"""Interaction-sequence graph model.

A temporal graph is kept as its time-ordered interaction list plus a
per-node history index (CSR layout). No adjacency matrix is ever built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class GraphError(ValueError):
    pass


class Interaction(NamedTuple):
    source: int
    target: int
    timestamp: float


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class TemporalGraph:
    """Time-ordered interactions over dense node ids ``0..N-1``.

    Attributes
    ----------
    node_count : int
    src, dst, ts : ndarray of shape (E,)
        Interactions, stably sorted by timestamp.
    time_rank : ndarray of shape (E,)
        Dense rank of each interaction's timestamp among distinct timestamps.
    indptr : ndarray of shape (N + 1,)
        ``hist_*[indptr[u]:indptr[u + 1]]`` is the history of node ``u``.
    hist_nbr, hist_time, hist_rank : ndarray of shape (2E,)
        Neighbor and timestamp of every history entry, oldest first per node.
    """

    def __init__(self, node_count: int, src, dst, ts):
        self.node_count = int(node_count)
        order = np.argsort(ts, kind="stable")
        self.src = _frozen(np.ascontiguousarray(src[order], dtype=np.int64))
        self.dst = _frozen(np.ascontiguousarray(dst[order], dtype=np.int64))
        self.ts = _frozen(np.ascontiguousarray(ts[order], dtype=np.float64))
        distinct, rank = np.unique(self.ts, return_inverse=True)
        self.n_timestamps = int(distinct.size)
        self.time_rank = _frozen(rank.astype(np.int64).reshape(-1))

        E = self.ts.size
        # entry 2e belongs to src[e], entry 2e+1 to dst[e]; a stable sort by
        # owner keeps each node's entries in interaction order
        owner = np.empty(2 * E, dtype=np.int64)
        owner[0::2] = self.src
        owner[1::2] = self.dst
        nbr = np.empty(2 * E, dtype=np.int64)
        nbr[0::2] = self.dst
        nbr[1::2] = self.src
        by_owner = np.argsort(owner, kind="stable")
        counts = np.bincount(owner, minlength=self.node_count)
        self.indptr = _frozen(np.concatenate([[0], np.cumsum(counts)]).astype(np.int64))
        self.hist_nbr = _frozen(nbr[by_owner])
        entry_event = by_owner // 2
        self.hist_time = _frozen(self.ts[entry_event])
        self.hist_rank = _frozen(self.time_rank[entry_event])
        self._hist_key = _frozen(owner[by_owner] * (self.n_timestamps + 1) + self.hist_rank)

    @property
    def num_interactions(self) -> int:
        return int(self.ts.size)

    def __len__(self) -> int:
        return self.num_interactions

    @property
    def interactions(self) -> list[Interaction]:
        return [
            Interaction(int(u), int(v), float(t))
            for u, v, t in zip(self.src, self.dst, self.ts)
        ]

    def history(self, u: int) -> list[tuple[int, float]]:
        lo, hi = self.indptr[u], self.indptr[u + 1]
        return [(int(n), float(t)) for n, t in zip(self.hist_nbr[lo:hi], self.hist_time[lo:hi])]

    def degrees(self) -> np.ndarray:
        """History length per node (a self-interaction counts twice)."""
        return np.diff(self.indptr)

    def history_windows(self, nodes: np.ndarray, ranks: np.ndarray, limit: int):
        """Vectorized most-recent-``limit`` history strictly before each query.

        ``ranks`` are timestamp ranks (see ``time_rank``). Returns
        ``(neighbors, times, mask)``, each of shape ``(len(nodes), limit)``,
        left-padded so the newest entry sits in the last column.
        """
        nodes = np.asarray(nodes, dtype=np.int64)
        key = nodes * (self.n_timestamps + 1) + np.asarray(ranks, dtype=np.int64)
        end = np.searchsorted(self._hist_key, key, side="left")
        start = np.maximum(self.indptr[nodes], end - limit)
        pos = end[:, None] - limit + np.arange(limit)[None, :]
        mask = pos >= start[:, None]
        pos = np.where(mask, pos, 0)
        if self.hist_nbr.size == 0:
            shape = (nodes.size, limit)
            return np.zeros(shape, np.int64), np.zeros(shape), np.zeros(shape, bool)
        nbrs = np.where(mask, self.hist_nbr[pos], 0)
        times = np.where(mask, self.hist_time[pos], 0.0)
        return nbrs, times, mask

    def __eq__(self, other) -> bool:
        if not isinstance(other, TemporalGraph):
            return NotImplemented
        return (
            self.node_count == other.node_count
            and np.array_equal(self.src, other.src)
            and np.array_equal(self.dst, other.dst)
            and np.array_equal(self.ts, other.ts)
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.hist_nbr, other.hist_nbr)
            and np.array_equal(self.hist_time, other.hist_time)
        )

    def __repr__(self) -> str:
        return f"TemporalGraph(N={self.node_count}, E={self.num_interactions})"


def build_graph(interactions: Iterable[Sequence] | np.ndarray, node_count: int) -> TemporalGraph:
    """Validate interactions and build a :class:`TemporalGraph`.

    Accepts any iterable of ``(u, v, t)`` triples; ordering is not required.
    Ties on the timestamp keep input order.
    """
    node_count = int(node_count)
    if node_count < 0:
        raise GraphError(f"node_count must be non-negative, got {node_count}")
    if isinstance(interactions, tuple) and len(interactions) == 3 and isinstance(interactions[0], np.ndarray):
        src_raw, dst_raw, ts = (np.asarray(a) for a in interactions)
    else:
        arr = np.asarray(list(interactions) if not isinstance(interactions, np.ndarray) else interactions,
                         dtype=np.float64)
        if arr.size == 0:
            arr = arr.reshape(0, 3)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise GraphError("interactions must be (u, v, t) triples")
        src_raw, dst_raw, ts = arr[:, 0], arr[:, 1], arr[:, 2]
    ts = np.asarray(ts, dtype=np.float64)
    for ids in (src_raw, dst_raw):
        bad = np.flatnonzero((ids != np.floor(ids)) | (ids < 0) | (ids >= node_count))
        if bad.size:
            i = int(bad[0])
            raise GraphError(f"interaction {i}: node id {ids[i]!r} outside [0, {node_count})")
    bad = np.flatnonzero(~np.isfinite(ts))
    if bad.size:
        raise GraphError(f"interaction {int(bad[0])}: timestamp {ts[bad[0]]!r} is not finite")
    bad = np.flatnonzero(ts < 0)
    if bad.size:
        raise GraphError(f"interaction {int(bad[0])}: negative timestamp {ts[bad[0]]!r}")
    src = src_raw.astype(np.int64)
    dst = dst_raw.astype(np.int64)
    return TemporalGraph(node_count, src, dst, ts)


def neighbor_history(g: TemporalGraph, u: int, before: float = math.inf, limit: int | None = None):
    """Up to ``limit`` most recent history entries of ``u`` strictly before ``before``.

    Returned oldest first as ``(neighbor, timestamp)`` pairs.
    """
    if not 0 <= u < g.node_count:
        raise GraphError(f"node {u} outside [0, {g.node_count})")
    if limit is not None and limit < 1:
        raise GraphError(f"limit must be >= 1, got {limit}")
    lo, hi = int(g.indptr[u]), int(g.indptr[u + 1])
    end = lo + int(np.searchsorted(g.hist_time[lo:hi], before, side="left"))
    start = lo if limit is None else max(lo, end - limit)
    return [(int(n), float(t)) for n, t in zip(g.hist_nbr[start:end], g.hist_time[start:end])]


@dataclass(frozen=True)
class NodeLabeling:
    labels: np.ndarray
    K: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise GraphError("labels must be one-dimensional")
        if self.K < 1:
            raise GraphError(f"K must be >= 1, got {self.K}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.K):
            raise GraphError(f"labels must lie in [0, {self.K})")
        missing = np.setdiff1d(np.arange(self.K), labels)
        if missing.size:
            raise GraphError(f"label ids never used: {missing[:10].tolist()}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_labels(cls, labels) -> "NodeLabeling":
        labels = np.asarray(labels, dtype=np.int64)
        return cls(labels, int(labels.max()) + 1 if labels.size else 1)

    def __len__(self) -> int:
        return int(self.labels.size)


@dataclass(frozen=True)
class GraphStats:
    nodes: int
    interactions: int
    edges: int
    min_interactions: int
    max_interactions: int
    mean_degree: float
    timestamps: int
    self_interactions: int
    clusters: int | None = None

    def as_row(self) -> dict:
        return dict(self.__dict__)


def graph_stats(g: TemporalGraph, labeling: NodeLabeling | None = None) -> GraphStats:
    """Dataset summary in the usual temporal-benchmark columns.

    ``edges`` counts unordered node pairs once, whatever the number of
    interactions between them. Per-node interaction counts count a
    self-interaction once.
    """
    N, E = g.node_count, g.num_interactions
    lo = np.minimum(g.src, g.dst)
    hi = np.maximum(g.src, g.dst)
    edges = int(np.unique(lo * max(N, 1) + hi).size) if E else 0
    loops = g.src == g.dst
    per_node = np.bincount(g.src, minlength=N) + np.bincount(g.dst[~loops], minlength=N)
    return GraphStats(
        nodes=N,
        interactions=E,
        edges=edges,
        min_interactions=int(per_node.min()) if N else 0,
        max_interactions=int(per_node.max()) if N else 0,
        mean_degree=2.0 * E / N if N else 0.0,
        timestamps=g.n_timestamps,
        self_interactions=int(loops.sum()),
        clusters=None if labeling is None else labeling.K,
    )
