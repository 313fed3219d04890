"""Sequential block-wise pairwise ranking for implicit feedback.

Trainers: threshold-gated block SGD (saros_b), block momentum (saros_m),
stochastic triplet BPR (bpr) and full-batch BPR (bpr_batch), over a shared
matrix-factorization scoring model, with a block-segmentation pipeline and
a MAP/NDCG evaluation harness.
"""

from .blocks import Block, BlockSequence, estimate_thresholds, segment_dataset, segment_user
from .core import ConfigError, DataError, Interaction, ModelParams, TrainConfig, init_params
from .eval import MetricsReport, average_precision_at_k, evaluate, ndcg_at_k
from .ingest import Dataset, Schema, binarize, dataset_stats, parse_log, prepare, split_dataset
from .loss import block_loss_and_grad, dataset_loss, triplet_grad, triplet_loss
from .persist import CheckpointError, load_checkpoint, save_checkpoint
from .train import (
    MomentumState,
    NumericError,
    TrainTrace,
    train,
    train_bpr,
    train_bpr_batch,
    train_saros_b,
    train_saros_m,
)

__version__ = "0.1.0"

__all__ = [
    "Block",
    "BlockSequence",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "Dataset",
    "Interaction",
    "MetricsReport",
    "ModelParams",
    "MomentumState",
    "NumericError",
    "Schema",
    "TrainConfig",
    "TrainTrace",
    "average_precision_at_k",
    "binarize",
    "block_loss_and_grad",
    "dataset_loss",
    "dataset_stats",
    "estimate_thresholds",
    "evaluate",
    "init_params",
    "load_checkpoint",
    "ndcg_at_k",
    "parse_log",
    "prepare",
    "save_checkpoint",
    "segment_dataset",
    "segment_user",
    "split_dataset",
    "train",
    "train_bpr",
    "train_bpr_batch",
    "train_saros_b",
    "train_saros_m",
    "triplet_grad",
    "triplet_loss",
]
