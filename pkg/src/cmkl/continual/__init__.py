from cmkl.continual.ewc import (
    DEFAULT_LAMBDAS,
    UNIFORM_LAMBDA,
    EWCConfig,
    EWCState,
    FisherAnchor,
    compute_fisher,
    ewc_penalty,
)
from cmkl.continual.kmeans import KMeansResult, kmeans, kmeans_plusplus, nearest_to_centroids
from cmkl.continual.objective import total_loss
from cmkl.continual.replay import ReplayBuffer, rebalance_buffer, sample_replay, select_exemplars

__all__ = [
    "DEFAULT_LAMBDAS",
    "UNIFORM_LAMBDA",
    "EWCConfig",
    "EWCState",
    "FisherAnchor",
    "KMeansResult",
    "ReplayBuffer",
    "compute_fisher",
    "ewc_penalty",
    "kmeans",
    "kmeans_plusplus",
    "nearest_to_centroids",
    "rebalance_buffer",
    "sample_replay",
    "select_exemplars",
    "total_loss",
]
