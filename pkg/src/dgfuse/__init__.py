"""Domain-generalized activity recognition with adaptive branch fusion.

Train on several source domains (subject groups wearing the same sensors),
test on an unseen one: a shared convolutional extractor feeds one feature
branch per training domain, a domain classifier gates the branches into a
fused representation, and cross-domain alignment losses keep the branches
transferable.
"""

from .data import (
    DGTask,
    DomainDataset,
    NormStats,
    SensorWindow,
    UNKNOWN_DOMAIN,
    fit_normalizer,
    normalize,
    split_train_val,
    window_stream,
)
from .distances import KernelSpec, coral_loss, mmd_squared, pairwise_average
from .metrics import EvalReport, confusion_matrix, evaluate, micro_roc_auc, precision_recall_f1
from .model import ModelConfig, ModelParams, forward, init_params, load_params, save_params
from .synthetic import SynthShiftSpec, generate_synthetic
from .training import TrainConfig, TrainLog, infer, train

__version__ = "0.1.0"

__all__ = [
    "DGTask",
    "DomainDataset",
    "EvalReport",
    "KernelSpec",
    "ModelConfig",
    "ModelParams",
    "NormStats",
    "SensorWindow",
    "SynthShiftSpec",
    "TrainConfig",
    "TrainLog",
    "UNKNOWN_DOMAIN",
    "confusion_matrix",
    "coral_loss",
    "evaluate",
    "fit_normalizer",
    "forward",
    "generate_synthetic",
    "infer",
    "init_params",
    "load_params",
    "micro_roc_auc",
    "mmd_squared",
    "normalize",
    "pairwise_average",
    "precision_recall_f1",
    "save_params",
    "split_train_val",
    "train",
    "window_stream",
]
