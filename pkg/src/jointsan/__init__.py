"""Joint span detector and unanswerable classifier for extractive reading comprehension, on numpy."""

from .config import TrainConfig
from .data import Example, FeaturizedExample, VocabularySet, featurize, parse_dataset, read_dataset, tokenize
from .errors import (AlignmentError, CheckpointMismatchError, ConfigError, DatasetFormatError, DimensionError,
                     GraphError, NumericError)
from .evaluation import EvalReport, evaluate, normalize_answer
from .model import ModelParams, collate, forward, init_params, predict
from .tensor import Tensor, backward, make_rng
from .training import load_checkpoint, train

__all__ = [
    "TrainConfig", "Example", "FeaturizedExample", "VocabularySet", "featurize", "parse_dataset", "read_dataset",
    "tokenize", "AlignmentError", "CheckpointMismatchError", "ConfigError", "DatasetFormatError", "DimensionError",
    "GraphError", "NumericError", "EvalReport", "evaluate", "normalize_answer", "ModelParams", "collate", "forward",
    "init_params", "predict", "Tensor", "backward", "make_rng", "load_checkpoint", "train",
]
