"""Joint model: shared encoder, span detector and unanswerable classifier."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import answer, classifier
from .answer import AnswerParams, decode_span
from .classifier import ClassifierParams, Prediction, override_answer
from .config import TrainConfig
from .data import PAD_ID, Example, FeaturizedExample
from .encoder import EncoderParams, encode
from .errors import DimensionError
from .layers import Initializer, ParamGroup
from .tensor import Tensor, sigmoid


@dataclass
class ModelParams(ParamGroup):
    encoder: EncoderParams
    answer: AnswerParams
    classifier: ClassifierParams

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise DimensionError(f"state is missing parameters {sorted(missing)}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise DimensionError(f"{name}: stored shape {value.shape} != model shape {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def num_parameters(self, trainable_only: bool = True) -> int:
        return sum(p.size for p in self.parameters(trainable_only))


def init_params(cfg: TrainConfig, word_matrix: np.ndarray, n_pos: int, n_ner: int,
                rng: np.random.Generator) -> ModelParams:
    init = Initializer(rng, cfg.np_dtype)
    d = cfg.d
    return ModelParams(
        encoder=EncoderParams.create(init, cfg, word_matrix, n_pos, n_ner),
        answer=AnswerParams.create(init, 4 * d, 2 * d),
        classifier=ClassifierParams.create(init, 4 * d, 2 * d),
    )


@dataclass
class Batch:
    ids: list[str]
    passage_ids: np.ndarray
    question_ids: np.ndarray
    pos_ids: np.ndarray
    ner_ids: np.ndarray
    match_features: np.ndarray
    p_mask: np.ndarray
    q_mask: np.ndarray
    null_index: np.ndarray
    begin: np.ndarray
    end: np.ndarray
    label: np.ndarray
    cove_p: Optional[np.ndarray] = None
    cove_q: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.ids)


def collate(items: Sequence[FeaturizedExample],
            contextual: Optional[Mapping[str, Mapping[str, np.ndarray]]] = None,
            cove_dim: Optional[int] = None) -> Batch:
    """Pad a list of featurized examples into one batch."""
    B = len(items)
    n = max(fe.passage_len for fe in items)
    m = max(max(len(fe.question_ids) for fe in items), 1)
    pid = np.full((B, n), PAD_ID, dtype=np.int64)
    qid = np.full((B, m), PAD_ID, dtype=np.int64)
    pos = np.full((B, n), PAD_ID, dtype=np.int64)
    ner = np.full((B, n), PAD_ID, dtype=np.int64)
    feats = np.zeros((B, n, 4))
    p_mask = np.zeros((B, n), dtype=bool)
    q_mask = np.zeros((B, m), dtype=bool)
    for b, fe in enumerate(items):
        L, Q = fe.passage_len, len(fe.question_ids)
        pid[b, :L], pos[b, :L], ner[b, :L] = fe.passage_ids, fe.pos_ids, fe.ner_ids
        feats[b, :L] = fe.match_features
        qid[b, :Q] = fe.question_ids
        p_mask[b, :L] = True
        q_mask[b, :Q] = True
    batch = Batch(
        ids=[fe.id for fe in items], passage_ids=pid, question_ids=qid, pos_ids=pos, ner_ids=ner,
        match_features=feats, p_mask=p_mask, q_mask=q_mask,
        null_index=np.array([fe.passage_len - 1 for fe in items]),
        begin=np.array([fe.span[0] for fe in items]), end=np.array([fe.span[1] for fe in items]),
        label=np.array([fe.label for fe in items], dtype=np.float64),
    )
    if contextual is not None:
        batch.cove_p = np.zeros((B, n, cove_dim))
        batch.cove_q = np.zeros((B, m, cove_dim))
        for b, fe in enumerate(items):
            vecs = contextual.get(fe.id)
            if vecs is None:
                raise DimensionError(f"no contextual vectors for example {fe.id!r}")
            cp, cq = np.asarray(vecs["passage"]), np.asarray(vecs["question"])
            L, Q = fe.passage_len, len(fe.question_ids)
            if cp.shape[0] not in (L, L - 1) or cq.shape[0] != Q or cp.shape[1] != cove_dim or cq.shape[1] != cove_dim:
                raise DimensionError(
                    f"{fe.id}: contextual vectors {cp.shape}/{cq.shape} do not fit "
                    f"{L} passage and {Q} question tokens of dim {cove_dim}")
            batch.cove_p[b, :cp.shape[0]] = cp
            batch.cove_q[b, :Q] = cq
    return batch


@dataclass
class ForwardOutput:
    p_begin: Tensor
    p_end: Tensor
    p_unanswerable: Tensor
    logit: Tensor
    trace: dict = field(default_factory=dict)


def forward(params: ModelParams, batch: Batch, cfg: TrainConfig, training: bool = False,
            rng: Optional[np.random.Generator] = None, keep_trace: bool = False) -> ForwardOutput:
    trace: Optional[dict] = {} if keep_trace else None
    enc = encode(batch, params.encoder, cfg, training, rng, trace)
    s0, alpha = answer.initial_state(enc.H_q, batch.q_mask, params.answer)
    states, betas = answer.run_steps(s0, enc.M, batch.p_mask, params.answer, cfg.steps)
    p_begin, p_end = answer.span_distributions(states, enc.M, batch.p_mask, params.answer, training,
                                               cfg.step_dropout, rng, trace)
    m0, gamma = classifier.memory_summary(enc.M, batch.p_mask, params.classifier)
    logit = classifier.classify_logit(s0, m0, params.classifier)
    p_u = sigmoid(logit)
    if trace is not None:
        trace.update(H_q=enc.H_q, H_p=enc.H_p, M=enc.M, alpha=alpha, beta=betas, gamma=gamma,
                     states=states, s0=s0, m0=m0)
    return ForwardOutput(p_begin, p_end, p_u, logit, trace or {})


def iter_batches(items: Sequence, batch_size: int, order: Optional[Iterable[int]] = None):
    order = list(range(len(items))) if order is None else list(order)
    for start in range(0, len(order), batch_size):
        yield [items[i] for i in order[start:start + batch_size]]


def predict(params: ModelParams, examples: Sequence[Example], featurized: Sequence[FeaturizedExample],
            cfg: TrainConfig, use_classifier: Optional[bool] = None, threshold: Optional[float] = None,
            contextual=None, batch_size: int = 64) -> dict[str, Prediction]:
    """Eval-mode predictions keyed by question id.

    With ``use_classifier`` the answer is emptied whenever P_u exceeds
    ``threshold``; otherwise only the NULL span yields an empty answer.
    """
    use_classifier = cfg.use_classifier_override if use_classifier is None else use_classifier
    threshold = cfg.threshold if threshold is None else threshold
    by_id = {ex.id: ex for ex in examples}
    out: dict[str, Prediction] = {}
    for chunk in iter_batches(list(featurized), batch_size):
        batch = collate(chunk, contextual, cfg.cove_dim if cfg.use_cove else None)
        res = forward(params, batch, cfg, training=False)
        for b, qid in enumerate(batch.ids):
            L = int(batch.null_index[b]) + 1
            span = decode_span(res.p_begin.data[b, :L], res.p_end.data[b, :L], cfg.max_span_len)
            p_u = float(res.p_unanswerable.data[b])
            out[qid] = override_answer(span, p_u, threshold if use_classifier else np.inf, by_id[qid])
    return out
