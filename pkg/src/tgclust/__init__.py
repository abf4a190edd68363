"""Temporal graph clustering: batch-trained node embeddings, pluggable
clustering losses and two-step K-means evaluation."""

from tgclust.graph import Interaction, NodeLabeling, TemporalGraph, build_graph, graph_stats
from tgclust.features import (
    FeatureMatrix,
    PretrainConfig,
    one_hot,
    positional_encoding,
    pretrain_features,
    random_features,
)
from tgclust.batching import Batch, TrainingItem, materialize_batch, schedule_batches
from tgclust.model import TrainConfig, TrainLog, base_loss, score, train
from tgclust.evaluation import MetricsReport, accuracy, ari, evaluate, f1_macro, hungarian, kmeans, nmi

__version__ = "0.1.0"

__all__ = [
    "Interaction",
    "NodeLabeling",
    "TemporalGraph",
    "build_graph",
    "graph_stats",
    "FeatureMatrix",
    "PretrainConfig",
    "one_hot",
    "positional_encoding",
    "pretrain_features",
    "random_features",
    "Batch",
    "TrainingItem",
    "materialize_batch",
    "schedule_batches",
    "TrainConfig",
    "TrainLog",
    "base_loss",
    "score",
    "train",
    "MetricsReport",
    "accuracy",
    "ari",
    "evaluate",
    "f1_macro",
    "hungarian",
    "kmeans",
    "nmi",
]
