"""Chronological training batches with history windows and negatives."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from tgclust.graph import TemporalGraph


class BatchError(ValueError):
    pass


class TrainingItem(NamedTuple):
    source: int
    target: int
    timestamp: float
    history: list  # [(neighbor, timestamp)], oldest first
    negatives: list


def schedule_batches(g: TemporalGraph, batch_size: int) -> list[range]:
    if batch_size < 1:
        raise BatchError(f"batch_size must be >= 1, got {batch_size}")
    E = g.num_interactions
    return [range(lo, min(lo + batch_size, E)) for lo in range(0, E, batch_size)]


class NegativeSampler:
    """Draws nodes from the interaction-count distribution raised to 0.75."""

    def __init__(self, g: TemporalGraph, power: float = 0.75):
        if g.node_count <= 2:
            raise BatchError(f"need N > 2 to draw negatives distinct from both endpoints, got N={g.node_count}")
        self.N = g.node_count
        weight = g.degrees().astype(np.float64) ** power
        total = weight.sum()
        if total == 0:
            weight = np.ones(self.N)
            total = float(self.N)
        self.cum = np.cumsum(weight / total)
        self.nbytes = self.cum.nbytes

    def draw(self, u: np.ndarray, v: np.ndarray, k: int, rng: np.random.Generator,
             max_rounds: int = 32) -> np.ndarray:
        """``len(u) x k`` negatives, each outside ``{u_i, v_i}``; with replacement."""
        out = np.searchsorted(self.cum, rng.random((u.size, k)), side="right")
        out = np.minimum(out, self.N - 1)
        bad = (out == u[:, None]) | (out == v[:, None])
        for _ in range(max_rounds):
            if not bad.any():
                return out
            rows, cols = np.nonzero(bad)
            fresh = np.minimum(np.searchsorted(self.cum, rng.random(rows.size), side="right"), self.N - 1)
            out[rows, cols] = fresh
            bad[rows, cols] = (fresh == u[rows]) | (fresh == v[rows])
        # the distribution puts (almost) all of its mass on {u, v}: fall back
        # to a uniform draw over the remaining nodes
        rows, cols = np.nonzero(bad)
        a = np.minimum(u[rows], v[rows])
        b = np.maximum(u[rows], v[rows])
        n_excluded = np.where(a == b, 1, 2)
        r = rng.integers(0, self.N - n_excluded)
        r = r + (r >= a)
        r = r + ((r >= b) & (a != b))
        out[rows, cols] = r
        return out


@dataclass(frozen=True)
class Batch:
    """A run of consecutive interactions, stored column-wise.

    ``hist_*`` arrays are ``B x H`` and left-padded (``hist_mask`` False on
    padding); ``negatives`` is ``B x Q``.
    """

    index: int
    start: int
    src: np.ndarray
    dst: np.ndarray
    ts: np.ndarray
    hist_nodes: np.ndarray
    hist_times: np.ndarray
    hist_mask: np.ndarray
    negatives: np.ndarray

    def __post_init__(self):
        for name in ("src", "dst", "ts", "hist_nodes", "hist_times", "hist_mask", "negatives"):
            getattr(self, name).setflags(write=False)

    def __len__(self) -> int:
        return int(self.src.size)

    @property
    def stop(self) -> int:
        return self.start + len(self)

    @property
    def items(self) -> list[TrainingItem]:
        out = []
        for i in range(len(self)):
            m = self.hist_mask[i]
            hist = [(int(n), float(t)) for n, t in zip(self.hist_nodes[i][m], self.hist_times[i][m])]
            out.append(TrainingItem(int(self.src[i]), int(self.dst[i]), float(self.ts[i]), hist,
                                    [int(n) for n in self.negatives[i]]))
        return out

    def nodes(self) -> np.ndarray:
        """Distinct endpoints of the batch's interactions, ascending."""
        return np.unique(np.concatenate([self.src, self.dst]))

    def arrays(self) -> list[np.ndarray]:
        return [self.src, self.dst, self.ts, self.hist_nodes, self.hist_times, self.hist_mask, self.negatives]

    @property
    def nbytes(self) -> int:
        return sum(a.nbytes for a in self.arrays())


def materialize_batch(g: TemporalGraph, span: range, history_len: int = 5, n_negatives: int = 5,
                      seed: int = 0, epoch: int = 0, batch_index: int = 0,
                      sampler: NegativeSampler | None = None) -> Batch:
    """Build the batch for interactions ``span`` (a slice of the time order).

    Negatives are reproducible from ``(seed, epoch, batch_index)`` alone.
    """
    if span.step != 1 or span.start < 0 or span.stop > g.num_interactions or span.start > span.stop:
        raise BatchError(f"invalid interaction range {span}")
    if history_len < 1 or n_negatives < 1:
        raise BatchError("history_len and n_negatives must be >= 1")
    sampler = sampler or NegativeSampler(g)
    sl = slice(span.start, span.stop)
    src, dst, ts = g.src[sl].copy(), g.dst[sl].copy(), g.ts[sl].copy()
    hist_nodes, hist_times, hist_mask = g.history_windows(src, g.time_rank[sl], history_len)
    rng = np.random.default_rng([seed, epoch, batch_index])
    negatives = sampler.draw(src, dst, n_negatives, rng)
    return Batch(batch_index, span.start, src, dst, ts, hist_nodes, hist_times, hist_mask, negatives)


def batch_bytes_bound(batch_size: int, history_len: int, n_negatives: int) -> int:
    """Upper bound on a materialized batch's buffers, in bytes."""
    per_item = 3 * 8 + history_len * (8 + 8 + 1) + n_negatives * 8
    return batch_size * per_item


def n_batches(g: TemporalGraph, batch_size: int) -> int:
    return math.ceil(g.num_interactions / batch_size)
