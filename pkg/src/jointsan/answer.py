"""Multi-step span detector.

A GRU state is refined for ``steps`` turns by attending over the memory.  Each
turn scores begin and end positions with bilinear heads; the per-turn
distributions are averaged, with whole turns dropped at random in training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .layers import GRUParams, Initializer, ParamGroup, gru_cell
from .tensor import Tensor


@dataclass
class AnswerParams(ParamGroup):
    w0: Tensor
    w1: Tensor
    gru: GRUParams
    w2: Tensor
    w3: Tensor

    @classmethod
    def create(cls, init: Initializer, question_dim: int, memory_dim: int) -> "AnswerParams":
        return cls(
            w0=init.fan_in(question_dim, 1),
            w1=init.fan_in(question_dim, memory_dim),
            gru=GRUParams.create(init, memory_dim, question_dim),
            w2=init.fan_in(question_dim, memory_dim),
            w3=init.fan_in(question_dim, memory_dim),
        )


@dataclass
class SpanPrediction:
    p_begin: np.ndarray
    p_end: np.ndarray
    begin: int
    end: int
    span_score: float
    is_null: bool


def attend(keys: Tensor, scores: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
    """Masked softmax over ``scores`` (B, L) and the weighted sum of ``keys`` (B, L, k)."""
    B, L = scores.shape
    weights = T.softmax(scores, axis=-1, mask=mask)
    summary = (weights.reshape(B, 1, L) @ keys).reshape(B, keys.shape[-1])
    return summary, weights


def _bilinear(state: Tensor, W: Tensor, M: Tensor) -> Tensor:
    # state (B, q), W (q, k), M (B, L, k) -> (B, L)
    B = state.shape[0]
    proj = (state @ W).reshape(B, W.shape[1], 1)
    return (M @ proj).reshape(B, M.shape[1])


def initial_state(H_q: Tensor, q_mask: np.ndarray, params: AnswerParams) -> tuple[Tensor, Tensor]:
    """s0: attention-weighted summary of the question columns scored by w0."""
    B, m, _ = H_q.shape
    scores = (H_q @ params.w0).reshape(B, m)
    return attend(H_q, scores, q_mask)


def step(s_prev: Tensor, M: Tensor, p_mask: np.ndarray, params: AnswerParams) -> tuple[Tensor, Tensor]:
    """One reasoning turn: attend over memory with s_prev W1, then update the GRU state."""
    x, beta = attend(M, _bilinear(s_prev, params.w1, M), p_mask)
    return gru_cell(s_prev, x, params.gru), beta


def run_steps(s0: Tensor, M: Tensor, p_mask: np.ndarray, params: AnswerParams,
              steps: int) -> tuple[list[Tensor], list[Tensor]]:
    states, betas = [s0], []
    for _ in range(1, steps):
        s, beta = step(states[-1], M, p_mask, params)
        states.append(s)
        betas.append(beta)
    return states, betas


def span_distributions(states: Sequence[Tensor], M: Tensor, p_mask: np.ndarray, params: AnswerParams,
                       training: bool = False, step_dropout_rate: float = 0.0,
                       rng: Optional[np.random.Generator] = None,
                       trace: Optional[dict] = None) -> tuple[Tensor, Tensor]:
    """Average the per-turn begin/end distributions.

    In training each turn is kept with probability ``1 - step_dropout_rate``
    and the survivors are averaged; if every turn is dropped, one turn chosen
    uniformly at random is kept.
    """
    begins = [T.softmax(_bilinear(s, params.w2, M), axis=-1, mask=p_mask) for s in states]
    ends = [T.softmax(_bilinear(s, params.w3, M), axis=-1, mask=p_mask) for s in states]
    keep = list(range(len(states)))
    if training and step_dropout_rate > 0:
        alive = rng.random(len(states)) >= step_dropout_rate
        if not alive.any():
            alive[rng.integers(len(states))] = True
        keep = [i for i in range(len(states)) if alive[i]]
    if trace is not None:
        trace.update(step_begin=begins, step_end=ends, kept_steps=keep)
    if len(keep) == 1:
        return begins[keep[0]], ends[keep[0]]
    scale = 1.0 / len(keep)
    p_begin = T.stack([begins[i] for i in keep], axis=0).sum(axis=0) * scale
    p_end = T.stack([ends[i] for i in keep], axis=0).sum(axis=0) * scale
    return p_begin, p_end


def decode_span(p_begin, p_end, max_span_len: int = 15) -> SpanPrediction:
    """Best legal span over n+1 positions whose last one is NULL.

    Legal pairs are (i, j) with i <= j <= i + max_span_len - 1 and j < n, plus
    the NULL pair (n, n).  Ties resolve to the smaller i, then smaller j.
    """
    pb = np.asarray(p_begin.data if isinstance(p_begin, Tensor) else p_begin, dtype=np.float64)
    pe = np.asarray(p_end.data if isinstance(p_end, Tensor) else p_end, dtype=np.float64)
    n = len(pb) - 1
    scores = np.outer(pb, pe)
    i, j = np.indices(scores.shape)
    legal = (i <= j) & (j - i < max_span_len) & (j < n)
    legal[n, n] = True
    flat = np.where(legal, scores, -np.inf).ravel()
    best = int(np.argmax(flat))
    begin, end = divmod(best, len(pb))
    return SpanPrediction(pb, pe, begin, end, float(flat[best]), begin == n)
