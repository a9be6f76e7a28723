"""Popularity-fair BPR training with item loss equalization."""

from .bpr import (FactorModel, RecommendationSet, TrainConfig, init_model, load_checkpoint,
                  pair_loss, recommend_topk, save_checkpoint, score, train)
from .ile import Distance, GroupLossTrace, IleConfig, distance, ile_objective, pair_gradient_weights
from .ingest import (Group, InteractionDataset, PopularityGrouping, assign_popularity_groups,
                     load_interactions, profile_distribution, split_train_test)
from .metrics import MetricsReport, evaluate

__version__ = "0.1.0"

__all__ = [
    "Distance", "FactorModel", "Group", "GroupLossTrace", "IleConfig", "InteractionDataset",
    "MetricsReport", "PopularityGrouping", "RecommendationSet", "TrainConfig",
    "assign_popularity_groups", "distance", "evaluate", "ile_objective", "init_model",
    "load_checkpoint", "load_interactions", "pair_gradient_weights", "pair_loss",
    "profile_distribution", "recommend_topk", "save_checkpoint", "score", "split_train_test", "train",
]
