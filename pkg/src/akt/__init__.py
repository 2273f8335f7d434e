"""Attentive knowledge tracing.

Predicts learner responses from interaction history with a
monotonic-attention network over question and interaction embeddings,
optionally difficulty-scaled (Rasch mode). Everything runs on numpy with
a built-from-scratch reverse-mode tape; the attention kernels also ship
as an optional compiled extension.
"""

__version__ = "0.1.0"

from .data import (Batch, Corpus, DatasetMeta, Interaction,
                   InteractionSequence, apply_filters, expand_multi_concept,
                   kfold_split, make_batches, parse_csv, truncate, write_csv)
from .errors import (AktError, ConfigError, DataError, DivergenceError,
                     MetricError, NumericsError, ShapeError)
from .evaluation import PredictionSet, ablation_suite, auc, predict_dataset
from .model import AktConfig, AktModel, VARIANTS, build
from .synthetic import GroundTruth, SimSpec, bayes_optimal_auc, generate
from .tensor import Tensor, grad_check, no_grad
from .training import (PAPER_GRID, EarlyStopper, RunRecord, TrainConfig,
                       cross_validate, grid_search, train_fold)

__all__ = [
    "__version__",
    "AktConfig", "AktModel", "VARIANTS", "build",
    "Batch", "Corpus", "DatasetMeta", "Interaction", "InteractionSequence",
    "apply_filters", "expand_multi_concept", "kfold_split", "make_batches",
    "parse_csv", "truncate", "write_csv",
    "PredictionSet", "ablation_suite", "auc", "predict_dataset",
    "GroundTruth", "SimSpec", "bayes_optimal_auc", "generate",
    "Tensor", "grad_check", "no_grad",
    "PAPER_GRID", "EarlyStopper", "RunRecord", "TrainConfig",
    "cross_validate", "grid_search", "train_fold",
    "AktError", "ConfigError", "DataError", "DivergenceError",
    "MetricError", "NumericsError", "ShapeError",
]
