"""Sparse multitask learning for dual-task trial classification.

Saliency-based pruning at initialization with per-task masks and an
element-wise OR arbiter for the shared trunk, static masked training, and
LTH / SNIP / dense baselines, with a sweep harness and an sklearn-style
estimator facade.
"""

from .autodiff import (
    Graph,
    conv_spatial_forward,
    conv_temporal_forward,
    dense_forward,
    elu,
    avg_pool_forward,
    finite_difference_gradient,
    softmax,
    softmax_cross_entropy,
)
from .data import (
    SynthConfig,
    TrialDataset,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split,
    zscore,
    zscore_dataset,
)
from .estimator import SparseMultitaskClassifier
from .metrics import SweepRecord, accuracy, aggregate, confusion_matrix, macro_f1
from .network import (
    ArchConfig,
    LossWeights,
    MaskSet,
    ParameterPartition,
    build_model,
    forward_task,
    multitask_loss,
)
from .pruning import (
    SaliencyScores,
    SparsityConfig,
    arbiter_or,
    generate_masks_ours,
    lth_masks,
    load_masks,
    magnitude_mask,
    save_masks,
    saliency_scores,
    snip_global_masks,
    topk_mask,
)
from .training import (
    MultitaskSplits,
    RunRecord,
    TrainConfig,
    apply_masks,
    evaluate,
    load_run,
    save_run,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "Graph",
    "LossWeights",
    "MaskSet",
    "MultitaskSplits",
    "ParameterPartition",
    "RunRecord",
    "SaliencyScores",
    "SparseMultitaskClassifier",
    "SparsityConfig",
    "SweepRecord",
    "SynthConfig",
    "TrainConfig",
    "TrialDataset",
    "accuracy",
    "aggregate",
    "apply_masks",
    "arbiter_or",
    "avg_pool_forward",
    "build_model",
    "confusion_matrix",
    "conv_spatial_forward",
    "conv_temporal_forward",
    "dense_forward",
    "elu",
    "evaluate",
    "finite_difference_gradient",
    "forward_task",
    "generate_masks_ours",
    "generate_synthetic",
    "load_dataset",
    "load_masks",
    "load_run",
    "lth_masks",
    "macro_f1",
    "magnitude_mask",
    "multitask_loss",
    "saliency_scores",
    "save_dataset",
    "save_masks",
    "save_run",
    "snip_global_masks",
    "softmax",
    "softmax_cross_entropy",
    "split",
    "topk_mask",
    "train",
    "zscore",
    "zscore_dataset",
]
