"""Desk-scale RGBD diffusion augmentation pipeline with a toy depth estimator."""

from .autodiff import Tensor, backward, conv2d, elementwise, grad_check, no_grad, reduce_loss
from .denoiser import DenoiserNet, time_embedding
from .diffusion import (
    DiffusionConfig,
    TrainState,
    adamw_update,
    load_checkpoint,
    lr_schedule,
    sample,
    save_checkpoint,
    train_denoiser,
    train_step,
)
from .errors import D4dError
from .estimators import DepthEstimator, RgbdDiffusion
from .featspace import (
    EmbeddingVector,
    FeatureExtractor,
    embed_dataset,
    euclidean_distance,
    hellinger_distance,
)
from .mde import (
    DepthMetrics,
    MdeNet,
    compute_depth_metrics,
    difference_map,
    evaluate,
    train_mde,
)
from .rgbd import (
    RgbdDataset,
    RgbdSample,
    make_synthetic_dataset,
    merge_s3,
    preprocess,
    read_dataset,
    synth_scene,
    write_dataset,
)
from .schedules import (
    BetaSchedule,
    closed_form_marginal,
    cosine_schedule,
    linear_schedule,
    make_schedule,
)

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "backward",
    "conv2d",
    "elementwise",
    "grad_check",
    "no_grad",
    "reduce_loss",
    "DenoiserNet",
    "time_embedding",
    "DiffusionConfig",
    "TrainState",
    "adamw_update",
    "lr_schedule",
    "train_step",
    "train_denoiser",
    "sample",
    "save_checkpoint",
    "load_checkpoint",
    "D4dError",
    "RgbdDiffusion",
    "DepthEstimator",
    "EmbeddingVector",
    "FeatureExtractor",
    "embed_dataset",
    "euclidean_distance",
    "hellinger_distance",
    "DepthMetrics",
    "MdeNet",
    "compute_depth_metrics",
    "difference_map",
    "evaluate",
    "train_mde",
    "RgbdSample",
    "RgbdDataset",
    "synth_scene",
    "make_synthetic_dataset",
    "preprocess",
    "merge_s3",
    "read_dataset",
    "write_dataset",
    "BetaSchedule",
    "linear_schedule",
    "cosine_schedule",
    "make_schedule",
    "closed_form_marginal",
]
