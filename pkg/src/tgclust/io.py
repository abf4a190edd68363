"""Line-oriented text formats, synthetic planted-partition data and run config.

Formats (all whitespace separated, newline terminated)::

    edges     u v t            one interaction per line, '#' comments allowed
    labels    u label
    features  N d              header, then N rows "id v1 ... vd"
    remap     original new
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tgclust.features import FeatureMatrix
from tgclust.graph import NodeLabeling, TemporalGraph, build_graph

log = logging.getLogger(__name__)


class FormatError(ValueError):
    def __init__(self, path, lineno: int | None, message: str):
        where = f"{path}:{lineno}" if lineno is not None else f"{path}"
        super().__init__(f"{where}: {message}")
        self.path = path
        self.lineno = lineno


def _records(path):
    """Yield ``(lineno, fields)`` for non-blank, non-comment lines."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def _parse_id(tok: str, path, lineno: int, what: str = "node id") -> int:
    try:
        value = int(tok)
    except ValueError:
        raise FormatError(path, lineno, f"malformed {what} {tok!r}") from None
    if value < 0:
        raise FormatError(path, lineno, f"negative {what} {value}")
    return value


def parse_edges(path, node_count: int | None = None):
    """Read an ``u v t`` file. Returns ``(src, dst, ts, N)`` as arrays.

    ``N`` is ``1 + max id`` unless ``node_count`` is given.
    """
    src, dst, ts = [], [], []
    for lineno, fields in _records(path):
        if len(fields) < 3:
            raise FormatError(path, lineno, f"expected 'u v t', got {len(fields)} field(s)")
        u = _parse_id(fields[0], path, lineno)
        v = _parse_id(fields[1], path, lineno)
        try:
            t = float(fields[2])
        except ValueError:
            raise FormatError(path, lineno, f"malformed timestamp {fields[2]!r}") from None
        if not math.isfinite(t) or t < 0:
            raise FormatError(path, lineno, f"timestamp must be finite and >= 0, got {fields[2]}")
        src.append(u)
        dst.append(v)
        ts.append(t)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    ts = np.asarray(ts, dtype=np.float64)
    inferred = int(max(src.max(), dst.max())) + 1 if src.size else 0
    if node_count is None:
        node_count = inferred
    elif inferred > node_count:
        raise FormatError(path, None, f"node id {inferred - 1} >= node_count {node_count}")
    return src, dst, ts, node_count


def load_graph(path, node_count: int | None = None) -> TemporalGraph:
    src, dst, ts, N = parse_edges(path, node_count)
    return build_graph((src, dst, ts), N)


def densify(src: np.ndarray, dst: np.ndarray, extra_ids=()):
    """Renumber sparse ids to ``0..N-1`` in increasing original order.

    Returns ``(src, dst, original_ids)``; ``original_ids[new] = original``.
    """
    ids = np.unique(np.concatenate([src, dst, np.asarray(list(extra_ids), dtype=np.int64)]))
    return np.searchsorted(ids, src), np.searchsorted(ids, dst), ids


def write_remap(original_ids: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for new, orig in enumerate(original_ids):
            fh.write(f"{int(orig)} {new}\n")


def parse_remap(path) -> dict[int, int]:
    return {_parse_id(f[0], path, n): _parse_id(f[1], path, n) for n, f in _records(path)}


def write_edges(g: TemporalGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, v, t in zip(g.src.tolist(), g.dst.tolist(), g.ts.tolist()):
            fh.write(f"{u} {v} {t!r}\n")


def parse_labels(path, node_count: int, remap: dict[int, int] | None = None) -> NodeLabeling:
    """Read ``node label`` lines and relabel label values densely to ``[0, K)``.

    Label values keep their numeric order under relabeling. Every node
    ``0..N-1`` must be covered.
    """
    seen: dict[int, int] = {}
    for lineno, fields in _records(path):
        if len(fields) < 2:
            raise FormatError(path, lineno, "expected 'node label'")
        node = _parse_id(fields[0], path, lineno)
        label = _parse_id(fields[1], path, lineno, "label")
        if remap is not None:
            if node not in remap:
                continue
            node = remap[node]
        if node >= node_count:
            raise FormatError(path, lineno, f"node {node} >= node_count {node_count}")
        if node in seen and seen[node] != label:
            raise FormatError(path, lineno, f"node {node} has conflicting labels {seen[node]} and {label}")
        seen[node] = label
    missing = [u for u in range(node_count) if u not in seen]
    if missing:
        raise FormatError(path, None, f"{len(missing)} node(s) without a label, e.g. {missing[:10]}")
    raw = np.array([seen[u] for u in range(node_count)], dtype=np.int64)
    values, dense = np.unique(raw, return_inverse=True)
    if values.size == 1:
        log.warning("%s: every node carries the same label (K=1)", path)
    return NodeLabeling(dense.reshape(-1), int(values.size))


def write_labels(labeling: NodeLabeling, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, lab in enumerate(labeling.labels):
            fh.write(f"{u} {lab}\n")


def parse_features(path, kind: str = "loaded") -> FeatureMatrix:
    records = _records(path)
    try:
        lineno, header = next(records)
    except StopIteration:
        raise FormatError(path, None, "empty feature file") from None
    if len(header) != 2:
        raise FormatError(path, lineno, "header must be 'N d'")
    N = _parse_id(header[0], path, lineno, "row count")
    d = _parse_id(header[1], path, lineno, "dimension")
    data = np.empty((N, d))
    filled = np.zeros(N, dtype=bool)
    rows = 0
    for lineno, fields in records:
        rows += 1
        if len(fields) != d + 1:
            raise FormatError(path, lineno, f"expected id plus {d} values, got {len(fields)} fields")
        i = _parse_id(fields[0], path, lineno)
        if i >= N:
            raise FormatError(path, lineno, f"row id {i} >= N={N}")
        if filled[i]:
            raise FormatError(path, lineno, f"duplicate row id {i}")
        try:
            data[i] = [float(x) for x in fields[1:]]
        except ValueError:
            raise FormatError(path, lineno, "malformed value") from None
        filled[i] = True
    if rows != N or not filled.all():
        missing = np.flatnonzero(~filled)[:10].tolist()
        raise FormatError(path, None, f"header declares {N} rows, found {rows}; missing ids {missing}")
    return FeatureMatrix(data, kind)


def write_features(features: FeatureMatrix | np.ndarray, path, digits: int = 17) -> None:
    data = features.data if isinstance(features, FeatureMatrix) else np.asarray(features)
    N, d = data.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{N} {d}\n")
        for i, row in enumerate(data):
            fh.write(f"{i} " + " ".join(f"{x:.{digits}g}" for x in row) + "\n")


@dataclass
class DatasetBundle:
    graph: TemporalGraph
    labeling: NodeLabeling | None = None
    features: FeatureMatrix | None = None

    def __post_init__(self):
        N = self.graph.node_count
        if self.labeling is not None and len(self.labeling) != N:
            raise ValueError(f"labeling covers {len(self.labeling)} nodes, graph has {N}")
        if self.features is not None and len(self.features) != N:
            raise ValueError(f"features have {len(self.features)} rows, graph has {N}")


def load_dataset(edges, labels=None, features=None, dense: bool = True,
                 remap_out=None) -> DatasetBundle:
    """Load an on-disk dataset. With ``dense``, sparse node ids are renumbered
    and the mapping is written to ``remap_out`` when given."""
    src, dst, ts, N = parse_edges(edges)
    remap = None
    if dense and src.size:
        label_ids = [int(f[0]) for _, f in _records(labels)] if labels else ()
        src, dst, ids = densify(src, dst, label_ids)
        N = ids.size
        if not np.array_equal(ids, np.arange(N)):
            remap = {int(o): n for n, o in enumerate(ids)}
            if remap_out is not None:
                write_remap(ids, remap_out)
    graph = build_graph((src, dst, ts), N)
    labeling = parse_labels(labels, N, remap) if labels else None
    feats = parse_features(features) if features else None
    return DatasetBundle(graph, labeling, feats)


@dataclass
class SyntheticSpec:
    N: int = 200
    K: int = 4
    E: int = 20_000
    p_in: float = 0.9
    t_max: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.K < 1 or self.N < self.K:
            raise ValueError(f"need N >= K >= 1, got N={self.N}, K={self.K}")
        if self.E < 1:
            raise ValueError("E must be >= 1")
        if not 0 < self.p_in <= 1:
            raise ValueError("p_in must lie in (0, 1]")
        if self.t_max < 0:
            raise ValueError("t_max must be non-negative")


def generate_synthetic(spec: SyntheticSpec, out_dir=None) -> DatasetBundle:
    """Planted partition over interactions.

    Nodes are split into K contiguous blocks of near-equal size. Each
    interaction picks its source uniformly, then a target inside the
    source's block (never the source itself, unless the block is a
    singleton) with probability ``p_in``, otherwise uniformly outside it.
    Timestamps are uniform on ``[0, t_max]``.
    """
    rng = np.random.default_rng(spec.seed)
    N, K, E = spec.N, spec.K, spec.E
    sizes = np.full(K, N // K)
    sizes[: N % K] += 1
    start = np.concatenate([[0], np.cumsum(sizes)])
    labels = np.repeat(np.arange(K), sizes)

    src = rng.integers(0, N, size=E)
    block = labels[src]
    lo, size = start[block], sizes[block]
    intra = (rng.random(E) < spec.p_in) | (K == 1)

    # intra: uniform over the block minus the source
    r = rng.integers(0, np.maximum(size - 1, 1))
    offset = src - lo
    in_target = np.where(size > 1, lo + r + (r >= offset), src)
    # inter: uniform over the N - size nodes outside the block
    outside = np.maximum(N - size, 1)
    r = rng.integers(0, outside)
    out_target = np.where(r < lo, r, r + size)
    dst = np.where(intra, in_target, out_target)

    ts = np.sort(rng.uniform(0.0, spec.t_max, size=E))
    graph = build_graph((src, dst, ts), N)
    bundle = DatasetBundle(graph, NodeLabeling(labels, K))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_edges(graph, out / "edges.txt")
        write_labels(bundle.labeling, out / "labels.txt")
    return bundle


@dataclass
class RunConfig:
    """Flat key/value configuration; CLI flags override file values."""

    values: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        for key, value in data.items():
            if isinstance(value, dict):
                raise ValueError(f"{path}: key {key!r} is nested; config must be flat")
        return cls(dict(data))

    def merged(self, overrides: dict) -> dict:
        out = dict(self.values)
        out.update({k: v for k, v in overrides.items() if v is not None})
        return out
