"""Unanswerable-question head and the threshold override used at decoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .answer import SpanPrediction, attend
from .layers import Initializer, ParamGroup
from .tensor import Tensor


@dataclass
class ClassifierParams(ParamGroup):
    w5: Tensor
    w4: Tensor

    @classmethod
    def create(cls, init: Initializer, question_dim: int, memory_dim: int) -> "ClassifierParams":
        return cls(w5=init.fan_in(memory_dim, 1), w4=init.fan_in(question_dim + memory_dim, 1))


@dataclass
class Prediction:
    id: str
    answer: str
    begin: int
    end: int
    span_score: float
    p_unanswerable: float
    is_null: bool


def memory_summary(M: Tensor, p_mask: np.ndarray, params: ClassifierParams) -> tuple[Tensor, Tensor]:
    """m0 = sum_j gamma_j M_j with gamma = softmax(M w5) over the true length."""
    B, n, _ = M.shape
    return attend(M, (M @ params.w5).reshape(B, n), p_mask)


def classify_logit(s0: Tensor, m0: Tensor, params: ClassifierParams) -> Tensor:
    return (T.concat([s0, m0], axis=-1) @ params.w4).reshape(s0.shape[0])


def classify(s0: Tensor, m0: Tensor, params: ClassifierParams) -> Tensor:
    """Probability that the question is unanswerable, one per batch row."""
    return T.sigmoid(classify_logit(s0, m0, params))


def override_answer(span: SpanPrediction, p_unanswerable: float, threshold: float, example) -> Prediction:
    """Empty the answer when the classifier is strictly more confident than ``threshold``."""
    p_unanswerable = float(p_unanswerable)
    if p_unanswerable > threshold or span.is_null:
        answer, is_null = "", True
    else:
        answer, is_null = example.span_text(span.begin, span.end), False
    return Prediction(example.id, answer, span.begin, span.end, span.span_score, p_unanswerable, is_null)
