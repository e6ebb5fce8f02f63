"""Shared layers: lexicon encoding, contextual encoding and memory generation.

All sequence tensors are token-major: ``(batch, tokens, features)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .errors import DimensionError
from .layers import BiLSTMParams, FFNParams, Initializer, ParamGroup, bilstm, ffn
from .tensor import Tensor

N_HAND_FEATURES = 4


@dataclass
class EncoderParams(ParamGroup):
    word_emb: Tensor
    pos_emb: Tensor
    ner_emb: Tensor
    align_w: Tensor
    ffn_q: FFNParams
    ffn_p: FFNParams
    ctx1: BiLSTMParams
    ctx2: BiLSTMParams
    att_q: Tensor
    att_p: Tensor
    self_att: Tensor
    memory: BiLSTMParams

    @classmethod
    def create(cls, init: Initializer, cfg: TrainConfig, word_matrix: np.ndarray,
               n_pos: int, n_ner: int) -> "EncoderParams":
        d, emb = cfg.d, word_matrix.shape[1]
        cove = cfg.cove_dim if cfg.use_cove else 0
        word_emb = Tensor(word_matrix, requires_grad=cfg.fine_tune_embeddings, dtype=init.dtype)
        return cls(
            word_emb=word_emb,
            pos_emb=init.uniform((n_pos, cfg.pos_dim), 0.1),
            ner_emb=init.uniform((n_ner, cfg.ner_dim), 0.1),
            align_w=init.fan_in(emb, d),
            ffn_q=FFNParams.create(init, emb, d),
            ffn_p=FFNParams.create(init, 2 * emb + cfg.pos_dim + cfg.ner_dim + N_HAND_FEATURES, d),
            ctx1=BiLSTMParams.create(init, d + cove, d),
            ctx2=BiLSTMParams.create(init, 2 * d + cove, d),
            att_q=init.fan_in(4 * d, d),
            att_p=init.fan_in(4 * d, d),
            self_att=init.fan_in(8 * d, d),
            memory=BiLSTMParams.create(init, 16 * d, d),
        )


@dataclass
class EncodedBatch:
    H_q: Tensor
    H_p: Tensor
    M: Tensor
    q_mask: np.ndarray
    p_mask: np.ndarray
    trace: dict = field(default_factory=dict)


def align_question(emb_p: Tensor, emb_q: Tensor, align_w: Tensor, q_mask: np.ndarray) -> tuple[Tensor, Tensor]:
    """Soft-match each passage word to the question words.

    Weights are softmax_j(relu(W e_p_i) . relu(W e_q_j)); the result for token i
    is the weighted sum of question word embeddings.
    """
    proj_p = T.relu(emb_p @ align_w)
    proj_q = T.relu(emb_q @ align_w)
    scores = proj_p @ proj_q.swapaxes(-1, -2)
    attn = T.softmax(scores, axis=-1, mask=q_mask[:, None, :])
    return attn @ emb_q, attn


def lexicon_encode(batch, params: EncoderParams, cfg: TrainConfig, training: bool = False,
                   rng: Optional[np.random.Generator] = None, trace: Optional[dict] = None) -> tuple[Tensor, Tensor]:
    """Map ids and hand features into ``E_q`` (B, m, d) and ``E_p`` (B, n+1, d)."""
    emb_p = params.word_emb[batch.passage_ids]
    emb_q = params.word_emb[batch.question_ids]
    aligned, attn = align_question(emb_p, emb_q, params.align_w, batch.q_mask)
    feats = Tensor(batch.match_features.astype(params.word_emb.dtype))
    x_p = T.concat([emb_p, params.pos_emb[batch.pos_ids], params.ner_emb[batch.ner_ids], feats, aligned], axis=-1)
    E_p = T.dropout(ffn(x_p, params.ffn_p), cfg.dropout, training, rng)
    E_q = T.dropout(ffn(emb_q, params.ffn_q), cfg.dropout, training, rng)
    if trace is not None:
        trace["align"] = attn
    return E_q, E_p


def _pad_time(x: Tensor, length: int) -> Tensor:
    if x.shape[1] == length:
        return x
    pad = Tensor(np.zeros((x.shape[0], length - x.shape[1], x.shape[2]), dtype=x.dtype))
    return T.concat([x, pad], axis=1)


def contextual_encode(E_q: Tensor, E_p: Tensor, q_mask: np.ndarray, p_mask: np.ndarray,
                      params: EncoderParams, cfg: TrainConfig, cove_q: Optional[np.ndarray] = None,
                      cove_p: Optional[np.ndarray] = None, training: bool = False,
                      rng: Optional[np.random.Generator] = None) -> tuple[Tensor, Tensor]:
    """Two stacked BiLSTMs shared by question and passage; returns both layers concatenated (4d)."""
    B, m, _ = E_q.shape
    n = E_p.shape[1]
    width = max(m, n)
    x = T.concat([_pad_time(E_q, width), _pad_time(E_p, width)], axis=0)
    mask = np.zeros((2 * B, width), dtype=bool)
    mask[:B, :m] = q_mask
    mask[B:, :n] = p_mask

    extra = None
    if cove_q is not None or cove_p is not None:
        if cove_q is None or cove_p is None:
            raise DimensionError("contextual vectors must be given for both question and passage")
        if cove_q.shape[:2] != (B, m) or cove_p.shape[:2] != (B, n) or cove_q.shape[2] != cove_p.shape[2]:
            raise DimensionError(
                f"contextual vectors {cove_q.shape}/{cove_p.shape} do not match token shapes {(B, m)}/{(B, n)}")
        buf = np.zeros((2 * B, width, cove_q.shape[2]), dtype=E_q.dtype)
        buf[:B, :m] = cove_q
        buf[B:, :n] = cove_p
        extra = Tensor(buf)
    expected = params.ctx1.fwd.w_ih.shape[0] - E_q.shape[2]
    if (0 if extra is None else extra.shape[2]) != expected:
        raise DimensionError(f"encoder expects {expected}-dim contextual vectors")

    layer_in = x if extra is None else T.concat([x, extra], axis=-1)
    h1 = bilstm(layer_in, mask, params.ctx1)
    h1_in = T.dropout(h1, cfg.dropout, training, rng)
    layer_in = h1_in if extra is None else T.concat([h1_in, extra], axis=-1)
    h2 = bilstm(layer_in, mask, params.ctx2)
    H = T.concat([h1, h2], axis=-1)
    return H[:B, :m], H[B:, :n]


def build_memory(H_q: Tensor, H_p: Tensor, q_mask: np.ndarray, p_mask: np.ndarray, params: EncoderParams,
                 cfg: TrainConfig, training: bool = False, rng: Optional[np.random.Generator] = None,
                 trace: Optional[dict] = None) -> Tensor:
    """Fuse question into passage, self-attend with the diagonal removed, and run the memory BiLSTM.

    ``trace['C']`` holds the passage-to-question attention as (B, n+1, m): entry
    [b, i, j] is the weight of question token j for passage token i, i.e. the
    transpose of the question-by-passage matrix C.
    """
    hq = T.relu(H_q @ params.att_q)
    hp = T.relu(H_p @ params.att_p)
    scale = 1.0 / np.sqrt(hq.shape[-1])
    attn = T.softmax((hp @ hq.swapaxes(-1, -2)) * scale, axis=-1, mask=q_mask[:, None, :])
    C = T.dropout(attn, cfg.dropout, training, rng)
    U = T.concat([H_p, C @ H_q], axis=-1)

    us = T.relu(U @ params.self_att)
    n = U.shape[1]
    self_mask = p_mask[:, None, :] & ~np.eye(n, dtype=bool)[None]
    S = T.softmax((us @ us.swapaxes(-1, -2)) * (1.0 / np.sqrt(us.shape[-1])), axis=-1, mask=self_mask)
    U_hat = S @ U
    M = bilstm(T.concat([U, U_hat], axis=-1), p_mask, params.memory)
    if trace is not None:
        trace.update(C=attn, U=U, self_attention=S, U_hat=U_hat)
    return M


def encode(batch, params: EncoderParams, cfg: TrainConfig, training: bool = False,
           rng: Optional[np.random.Generator] = None, trace: Optional[dict] = None) -> EncodedBatch:
    E_q, E_p = lexicon_encode(batch, params, cfg, training, rng, trace)
    H_q, H_p = contextual_encode(E_q, E_p, batch.q_mask, batch.p_mask, params, cfg,
                                 batch.cove_q, batch.cove_p, training, rng)
    M = build_memory(H_q, H_p, batch.q_mask, batch.p_mask, params, cfg, training, rng, trace)
    if trace is not None:
        trace.update(E_q=E_q, E_p=E_p)
    return EncodedBatch(H_q, H_p, M, batch.q_mask, batch.p_mask, trace if trace is not None else {})
