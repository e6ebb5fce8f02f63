"""Model and training configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

VARIANTS = ("span-only", "joint", "joint+classifier")


@dataclass
class TrainConfig:
    # architecture
    d: int = 128
    embedding_dim: int = 300
    pos_dim: int = 16
    ner_dim: int = 8
    steps: int = 5
    use_cove: bool = False
    cove_dim: int = 600
    fine_tune_embeddings: bool = False
    # optimisation
    batch_size: int = 32
    lr: float = 0.002
    lr_halving_period: int = 10
    dropout: float = 0.1
    step_dropout: float = 0.4
    unk_mask_rate: float = 0.005
    lambda_cls: float = 1.0
    grad_clip: float = 5.0
    epochs: int = 30
    seed: int = 1234
    dtype: str = "float32"
    # decoding
    variant: str = "joint+classifier"
    max_span_len: int = 15
    threshold: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.lambda_cls < 0:
            raise ConfigError(f"lambda_cls must be non-negative, got {self.lambda_cls}")
        if self.steps < 1:
            raise ConfigError("steps (T) must be at least 1")
        if self.d < 1 or self.batch_size < 1 or self.max_span_len < 1:
            raise ConfigError("d, batch_size and max_span_len must be positive")
        for name in ("dropout", "step_dropout", "unk_mask_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.dropout >= 1.0:
            raise ConfigError("dropout must be below 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def effective_lambda(self) -> float:
        """Classifier loss weight; the span-only baseline never trains the classifier."""
        return 0.0 if self.variant == "span-only" else self.lambda_cls

    @property
    def use_classifier_override(self) -> bool:
        return self.variant == "joint+classifier"

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# fields that fix parameter shapes; a checkpoint only loads under matching values
ARCHITECTURE_KEYS = ("d", "embedding_dim", "pos_dim", "ner_dim", "use_cove", "cove_dim")
