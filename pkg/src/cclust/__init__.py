"""Joint contrastive + soft-assignment clustering over embedding vectors.

The public surface re-exports the pieces most callers need: the config
and dataset types, the two loss functions, the training loop, and the
evaluation metrics.
"""

from .augment import AugmentKind, AugmentSpec, augment_pair, hashing_featurize, strength_sweep
from .clustering import cluster_loss, soft_assign, target_distribution
from .contrastive import cosine_sim, instance_cl_loss
from .core import (
    ClusterLossVariant,
    Dataset,
    EpochSampler,
    Minibatch,
    Mode,
    TraceRecord,
    TrainConfig,
    load_dataset,
    make_synthetic,
    sample_minibatch,
    write_dataset,
)
from .metrics import accuracy, aug_similarity_histogram, cluster_geometry, kmeans, nmi
from .nn import AdamState, ModelParams, adam_step, encode, init_params, project
from .trainer import evaluate_params, init_centroids, run_ablation, train, train_step

__version__ = "0.1.0"

__all__ = [
    "AugmentKind",
    "AugmentSpec",
    "AdamState",
    "ClusterLossVariant",
    "Dataset",
    "EpochSampler",
    "Minibatch",
    "Mode",
    "ModelParams",
    "TraceRecord",
    "TrainConfig",
    "accuracy",
    "adam_step",
    "aug_similarity_histogram",
    "augment_pair",
    "cluster_geometry",
    "cluster_loss",
    "cosine_sim",
    "encode",
    "evaluate_params",
    "hashing_featurize",
    "init_centroids",
    "init_params",
    "instance_cl_loss",
    "kmeans",
    "load_dataset",
    "make_synthetic",
    "nmi",
    "project",
    "run_ablation",
    "sample_minibatch",
    "soft_assign",
    "strength_sweep",
    "target_distribution",
    "train",
    "train_step",
    "write_dataset",
]
