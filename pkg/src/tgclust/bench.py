"""Benchmark harness: single-run reports, batch-size sweeps and module
ablations, all emitted as CSV/JSON with a fixed column order."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, is_dataclass

import numpy as np

from tgclust import losses as L
from tgclust.evaluation import METRICS, MetricsReport, evaluate
from tgclust.features import PretrainConfig, pretrain_features
from tgclust.graph import NodeLabeling, TemporalGraph
from tgclust.memory import MemoryAccountant
from tgclust.model import TrainConfig, TrainingTimeout, train

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("batch_size", "epoch_runtime_s", "peak_aux_bytes", "status")
ABLATE_COLUMNS = ("modules", "runs") + tuple(f"{m}_{s}" for m in METRICS for s in ("mean", "std"))
DEFAULT_SWEEP_TIMEOUT = 600.0


def _plain(obj):
    if is_dataclass(obj):
        return {k: _plain(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass
class RunReport:
    config: dict
    epoch_losses: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    peak_aux_bytes: int = 0
    metrics: MetricsReport | None = None

    def __post_init__(self):
        if any(s < 0 for s in self.epoch_seconds) or self.peak_aux_bytes < 0:
            raise ValueError("runtime and memory must be non-negative")

    def to_dict(self) -> dict:
        return _plain({
            "config": self.config,
            "epoch_losses": self.epoch_losses,
            "epoch_seconds": self.epoch_seconds,
            "peak_aux_bytes": self.peak_aux_bytes,
            "metrics": self.metrics,
        })

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path) -> None:
        """One row per epoch: epoch, loss, seconds."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(("epoch", "loss", "seconds"))
            for i, (loss, sec) in enumerate(zip(self.epoch_losses, self.epoch_seconds)):
                w.writerow((i, repr(float(loss)), repr(float(sec))))


def run_pipeline(g: TemporalGraph, labeling: NodeLabeling | None, features, cfg: TrainConfig,
                 eval_seeds=(0, 1, 2, 3, 4)):
    """Train then evaluate. Returns ``(embeddings, TrainLog, RunReport)``."""
    acct = MemoryAccountant(g.node_count)
    Z, trail = train(g, features, cfg, labeling, accountant=acct)
    metrics = evaluate(Z, labeling, seeds=eval_seeds, restarts=cfg.kmeans_restarts) if labeling else None
    report = RunReport(_plain(cfg), trail.epoch_loss(), trail.epoch_seconds, acct.peak_aux_bytes, metrics)
    return Z, trail, report


def write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def sweep(g: TemporalGraph, features, batch_sizes, cfg: TrainConfig | None = None,
          labeling: NodeLabeling | None = None, timeout: float | None = DEFAULT_SWEEP_TIMEOUT,
          out=None) -> list[dict]:
    """One training epoch per batch size, same seed, sequentially.

    A point that runs past ``timeout`` seconds is stopped; its row carries
    the elapsed time as a lower bound and ``status="timeout"``.
    """
    sizes = [int(b) for b in batch_sizes]
    if not sizes or min(sizes) < 1:
        raise ValueError(f"batch sizes must be >= 1, got {list(batch_sizes)}")
    cfg = cfg or TrainConfig()
    rows = []
    for bs in sizes:
        point = TrainConfig(**{**vars(cfg), "epochs": 1, "batch_size": bs})
        acct = MemoryAccountant(g.node_count)
        t0 = time.perf_counter()
        deadline = None if timeout is None else t0 + timeout
        status = "ok"
        try:
            _, trail = train(g, features, point, labeling, accountant=acct, deadline=deadline)
            runtime = trail.epoch_seconds[0]
        except TrainingTimeout:
            runtime = time.perf_counter() - t0
            status = "timeout"
        rows.append({"batch_size": bs, "epoch_runtime_s": float(runtime),
                     "peak_aux_bytes": int(acct.peak_aux_bytes), "status": status})
        log.info("sweep batch_size=%d: %.3fs, %d bytes (%s)", bs, runtime, acct.peak_aux_bytes, status)
    if out is not None:
        write_rows(out, SWEEP_COLUMNS, rows)
    return rows


def module_label(modules) -> str:
    mods = L.parse_modules(modules)
    return ",".join(mods) if mods else "BASE"


def ablate(g: TemporalGraph, labeling: NodeLabeling, module_sets, seeds=(0, 1, 2, 3, 4),
           cfg: TrainConfig | None = None, features=None, pretrain: PretrainConfig | None = None,
           out=None) -> list[dict]:
    """Train once per (module subset, seed) and report metric means and stds.

    Each seed drives pre-training (unless ``features`` is given), training
    and the K-means evaluation of that run. Rows follow ``module_sets``.
    """
    if labeling is None:
        raise ValueError("ablation needs ground-truth labels")
    cfg = cfg or TrainConfig()
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("need at least one seed")
    subsets = [L.parse_modules(m) for m in module_sets]
    cache: dict[int, np.ndarray] = {}

    def feats(seed):
        if features is not None:
            return features
        if seed not in cache:
            pc = pretrain or PretrainConfig()
            cache[seed] = pretrain_features(g, PretrainConfig(**{**vars(pc), "seed": seed}))
        return cache[seed]

    done: dict[tuple, np.ndarray] = {}
    rows = []
    for mods in subsets:
        if mods not in done:
            runs = []
            for s in seeds:
                run_cfg = TrainConfig(**{**vars(cfg), "modules": mods, "seed": s})
                Z, _ = train(g, feats(s), run_cfg, labeling)
                runs.append(evaluate(Z, labeling, seeds=(s,), restarts=cfg.kmeans_restarts).as_tuple())
            done[mods] = np.array(runs)
        runs = done[mods]
        row = {"modules": module_label(mods), "runs": len(seeds)}
        for i, m in enumerate(METRICS):
            row[f"{m}_mean"] = float(runs[:, i].mean())
            row[f"{m}_std"] = float(runs[:, i].std())
        rows.append(row)
        log.info("ablation %s: nmi %.4f +- %.4f", row["modules"], row["nmi_mean"], row["nmi_std"])
    if out is not None:
        write_rows(out, ABLATE_COLUMNS, rows)
    return rows

