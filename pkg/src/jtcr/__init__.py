"""Joint two-phase collaborative ranking for point-of-interest recommendation.

Learns user/POI latent factors from implicit check-in feedback with two
pairwise ranking objectives (visited-vs-unvisited and multiple-vs-single
visits), a geographical influence factor on pair losses, and per-entity
regularization derived from the variance of monthly check-in activity.
"""

__version__ = "0.1.0"

from jtcr.data import (
    CheckinRecord,
    Dataset,
    InteractionStore,
    SplitDataset,
    build_interactions,
    chronological_split,
    filter_min_activity,
    parse_checkins,
)
from jtcr.geo import GeoIndex, GeoPoint, geo_similarity, haversine_angle, influence_factor
from jtcr.model import LatentModel, load_checkpoint, save_checkpoint
from jtcr.temporal import RegularizerVectors, regularizer_vectors, spearman
from jtcr.train import TrainConfig, TrainTrace, init_model, train
from jtcr.evaluation import EvalReport, evaluate, ndcg_at_k, precision_at_k, recommend

__all__ = [
    "CheckinRecord",
    "Dataset",
    "EvalReport",
    "GeoIndex",
    "GeoPoint",
    "InteractionStore",
    "LatentModel",
    "RegularizerVectors",
    "SplitDataset",
    "TrainConfig",
    "TrainTrace",
    "build_interactions",
    "chronological_split",
    "evaluate",
    "filter_min_activity",
    "geo_similarity",
    "haversine_angle",
    "influence_factor",
    "init_model",
    "load_checkpoint",
    "ndcg_at_k",
    "parse_checkins",
    "precision_at_k",
    "recommend",
    "regularizer_vectors",
    "save_checkpoint",
    "spearman",
    "train",
]
