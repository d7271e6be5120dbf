"""Multivariate spatial regression with neural spatially varying
coregionalization and Monte Carlo dropout uncertainty."""

from .estimator import DncRegressor
from .metrics import MetricsReport, coverage_and_length, rmspe
from .model import (
    DncModel,
    MaskBundle,
    SpatialDataset,
    assemble_loading,
    eval_factors,
    loss,
    predict_mean,
    residual_matrix,
    upper_triangle_positions,
)
from .networks import (
    DenseNetwork,
    DropoutMaskSet,
    GradientSet,
    apply_mask_to_params,
    backward,
    forward,
    sample_masks,
)
from .posterior import (
    PosteriorDraws,
    PredictiveSummary,
    cross_correlation,
    draw_posterior,
    predict,
    summarize,
    true_cross_correlation,
)
from .simulate import Kernel, SimOutput, gp_sample, kernel_eval, simulate_deepgp, simulate_stationary
from .storage import load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .training import (
    TrainConfig,
    TrainingDivergedError,
    TrainReport,
    fit,
    sgd_or_adam_step,
    update_beta,
    update_sigma2,
)

__version__ = "0.1.0"

__all__ = [
    "DncRegressor",
    "DncModel",
    "SpatialDataset",
    "MaskBundle",
    "DenseNetwork",
    "DropoutMaskSet",
    "GradientSet",
    "PosteriorDraws",
    "PredictiveSummary",
    "Kernel",
    "SimOutput",
    "TrainConfig",
    "TrainReport",
    "TrainingDivergedError",
    "MetricsReport",
    "forward",
    "backward",
    "apply_mask_to_params",
    "sample_masks",
    "eval_factors",
    "assemble_loading",
    "predict_mean",
    "loss",
    "residual_matrix",
    "upper_triangle_positions",
    "fit",
    "sgd_or_adam_step",
    "update_beta",
    "update_sigma2",
    "draw_posterior",
    "summarize",
    "predict",
    "cross_correlation",
    "true_cross_correlation",
    "gp_sample",
    "kernel_eval",
    "simulate_stationary",
    "simulate_deepgp",
    "rmspe",
    "coverage_and_length",
    "save_dataset",
    "load_dataset",
    "save_checkpoint",
    "load_checkpoint",
]
