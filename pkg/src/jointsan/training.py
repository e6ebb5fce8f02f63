"""Joint objective, Adamax and the training loop."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import tensor as T
from .config import ARCHITECTURE_KEYS, TrainConfig
from .data import Example, FeaturizedExample, mask_unknown_words
from .errors import CheckpointMismatchError, ConfigError, NumericError
from .evaluation import evaluate
from .model import ModelParams, collate, forward, init_params, iter_batches, predict
from .tensor import Tensor

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
CHECKPOINT_VERSION = 1


# -- losses ------------------------------------------------------------------------
def span_loss(p_begin: Tensor, p_end: Tensor, begin: np.ndarray, end: np.ndarray) -> Tensor:
    """Batch mean of -(log P_begin[gold begin] + log P_end[gold end])."""
    rows = np.arange(p_begin.shape[0])
    pb = T.clamp(p_begin[rows, np.asarray(begin)], PROB_FLOOR, 1.0)
    pe = T.clamp(p_end[rows, np.asarray(end)], PROB_FLOOR, 1.0)
    return -(T.log(pb) + T.log(pe)).mean()


def classifier_loss(p_u: Tensor, y: np.ndarray) -> Tensor:
    """Batch mean binary cross-entropy; y = 1 marks an unanswerable question."""
    p = T.clamp(p_u, PROB_FLOOR, 1.0 - PROB_FLOOR)
    y = Tensor(np.asarray(y, dtype=p.dtype))
    return -(y * T.log(p) + (1.0 - y) * T.log(1.0 - p)).mean()


def joint_loss(l_span, l_cls, lam: float):
    if lam < 0:
        raise ConfigError(f"loss weight must be non-negative, got {lam}")
    return l_span + lam * l_cls


def compute_loss(params: ModelParams, batch, cfg: TrainConfig, training: bool = False,
                 rng: Optional[np.random.Generator] = None, keep_trace: bool = False):
    """Return (joint, span, classifier) losses and the forward output.

    With a zero classifier weight the classifier loss is left out of the graph,
    so its parameters get an exactly zero gradient.
    """
    out = forward(params, batch, cfg, training, rng, keep_trace)
    l_span = span_loss(out.p_begin, out.p_end, batch.begin, batch.end)
    l_cls = classifier_loss(out.p_unanswerable, batch.label)
    lam = cfg.effective_lambda
    total = l_span if lam == 0 else joint_loss(l_span, l_cls, lam)
    return total, l_span, l_cls, out


# -- optimiser ---------------------------------------------------------------------
@dataclass
class AdamaxState:
    m: dict = field(default_factory=dict)
    u: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adamax_step(named_params: Sequence[tuple[str, Tensor]], grads: Mapping[str, np.ndarray],
                state: AdamaxState, lr: float) -> None:
    """In-place Adamax update: m <- b1 m + (1-b1) g; u <- max(b2 u, |g|);
    theta <- theta - lr / (1 - b1^t) * m / (u + eps)."""
    for name, _ in named_params:
        if not np.all(np.isfinite(grads[name])):
            raise NumericError(f"non-finite gradient for parameter {name}")
    state.t += 1
    step_size = lr / (1.0 - state.beta1 ** state.t)
    for name, p in named_params:
        g = grads[name]
        m = state.m.get(name)
        u = state.u.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            u = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        u = np.maximum(state.beta2 * u, np.abs(g))
        state.m[name], state.u[name] = m, u
        p.data = (p.data - step_size * m / (u + state.eps)).astype(p.dtype, copy=False)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for 1-based ``epoch``: halved after every ``lr_halving_period`` epochs."""
    return cfg.lr * 0.5 ** ((epoch - 1) // cfg.lr_halving_period)


# -- checkpoints -------------------------------------------------------------------
def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.tolist(), "dtype": str(obj.dtype)}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _from_jsonable(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.array(obj["__ndarray__"], dtype=obj["dtype"])
        return {k: _from_jsonable(v) for k, v in obj.items()}
    return obj


@dataclass
class Checkpoint:
    config: TrainConfig
    state: dict
    optimizer: AdamaxState
    epoch: int
    rng_state: dict
    history: list
    best_f1: float
    best_epoch: int


def save_checkpoint(path, params: ModelParams, cfg: TrainConfig, opt: AdamaxState, epoch: int,
                    rng: np.random.Generator, history: list, best_f1: float, best_epoch: int) -> None:
    arrays = {f"param/{k}": v for k, v in params.state_dict().items()}
    arrays.update({f"adamax_m/{k}": v for k, v in opt.m.items()})
    arrays.update({f"adamax_u/{k}": v for k, v in opt.u.items()})
    meta = {
        "format": "jointsan.checkpoint", "version": CHECKPOINT_VERSION, "config": cfg.to_dict(),
        "epoch": epoch, "adamax_t": opt.t, "rng_state": _to_jsonable(rng.bit_generator.state),
        "history": history, "best_f1": best_f1, "best_epoch": best_epoch,
    }
    arrays["meta"] = np.array(json.dumps(meta))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointMismatchError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        state, m, u = {}, {}, {}
        for key in z.files:
            kind, _, name = key.partition("/")
            if kind == "param":
                state[name] = z[key]
            elif kind == "adamax_m":
                m[name] = z[key]
            elif kind == "adamax_u":
                u[name] = z[key]
    return Checkpoint(
        config=TrainConfig.from_dict(meta["config"]), state=state, optimizer=AdamaxState(m=m, u=u, t=meta["adamax_t"]),
        epoch=meta["epoch"], rng_state=_from_jsonable(meta["rng_state"]), history=meta["history"],
        best_f1=meta["best_f1"], best_epoch=meta["best_epoch"],
    )


def params_from_state(cfg: TrainConfig, state: Mapping[str, np.ndarray]) -> ModelParams:
    """Rebuild a model whose shapes match ``state`` and load its values."""
    word = np.asarray(state["encoder.word_emb"])
    params = init_params(cfg, word, state["encoder.pos_emb"].shape[0], state["encoder.ner_emb"].shape[0],
                         T.make_rng(0))
    params.load_state_dict(state)
    return params


def check_compatible(saved: TrainConfig, requested: TrainConfig) -> None:
    diff = {k: (getattr(saved, k), getattr(requested, k)) for k in ARCHITECTURE_KEYS
            if getattr(saved, k) != getattr(requested, k)}
    if diff:
        raise CheckpointMismatchError(f"checkpoint/config mismatch (saved, requested): {diff}")


# -- training loop -----------------------------------------------------------------
@dataclass
class TrainResult:
    params: ModelParams
    history: list
    best_f1: float
    best_epoch: int
    optimizer: AdamaxState


def evaluate_split(params: ModelParams, examples: Sequence[Example], feats: Sequence[FeaturizedExample],
                   cfg: TrainConfig, contextual=None) -> dict:
    """Dev metrics under both decodings (with and without the classifier override), plus losses."""
    plain = predict(params, examples, feats, cfg, use_classifier=False, contextual=contextual)
    probs = {k: p.p_unanswerable for k, p in plain.items()}
    with_cls = predict(params, examples, feats, cfg, use_classifier=True, contextual=contextual)
    rep_plain = evaluate({k: p.answer for k, p in plain.items()}, examples, probs, cfg.threshold)
    rep_cls = evaluate({k: p.answer for k, p in with_cls.items()}, examples, probs, cfg.threshold)
    chosen = rep_cls if cfg.use_classifier_override else rep_plain
    losses = [0.0, 0.0, 0.0]
    for chunk in iter_batches(list(feats), 64):
        batch = collate(chunk, contextual, cfg.cove_dim if cfg.use_cove else None)
        total, ls, lc, _ = compute_loss(params, batch, cfg, training=False)
        w = len(chunk) / len(feats)
        losses = [losses[0] + w * total.item(), losses[1] + w * ls.item(), losses[2] + w * lc.item()]
    return {
        "em": chosen.em, "f1": chosen.f1, "cls_acc": chosen.classifier_accuracy,
        "em_span": rep_plain.em, "f1_span": rep_plain.f1, "em_cls": rep_cls.em, "f1_cls": rep_cls.f1,
        "loss": losses[0], "span_loss": losses[1], "cls_loss": losses[2],
    }


def train(cfg: TrainConfig, train_examples: Sequence[Example], train_feats: Sequence[FeaturizedExample],
          word_matrix: Optional[np.ndarray] = None, n_pos: int = 3, n_ner: int = 3,
          dev_examples: Optional[Sequence[Example]] = None, dev_feats: Optional[Sequence[FeaturizedExample]] = None,
          checkpoint_dir=None, resume: bool = False, contextual=None,
          on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train the joint model; fully determined by ``cfg`` (seed included) and the data.

    When ``checkpoint_dir`` is given, ``last.npz`` is written after every epoch,
    ``best.npz`` whenever dev F1 improves, and ``metrics.jsonl`` gains one
    record per epoch.  ``resume`` continues from ``last.npz``.
    """
    if not train_feats:
        raise ConfigError("training set is empty")
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    rng = T.make_rng(cfg.seed)
    start_epoch, history, best_f1, best_epoch = 1, [], -1.0, 0
    opt = AdamaxState()
    if resume and ckpt_dir is not None and (ckpt_dir / "last.npz").exists():
        ck = load_checkpoint(ckpt_dir / "last.npz")
        check_compatible(ck.config, cfg)
        params = params_from_state(ck.config.replace(fine_tune_embeddings=cfg.fine_tune_embeddings,
                                                     dtype=cfg.dtype), ck.state)
        opt = ck.optimizer
        rng.bit_generator.state = ck.rng_state
        start_epoch, history, best_f1, best_epoch = ck.epoch + 1, list(ck.history), ck.best_f1, ck.best_epoch
        logger.info("resumed from epoch %d", ck.epoch)
    else:
        if word_matrix is None:
            raise ConfigError("word_matrix is required unless resuming")
        params = init_params(cfg, word_matrix, n_pos, n_ner, rng)

    if ckpt_dir is not None:
        # rewrite the log so a resumed run holds exactly the records up to its start
        with open(ckpt_dir / "metrics.jsonl", "w", encoding="utf-8") as fh:
            for rec in history:
                fh.write(json.dumps(rec) + "\n")

    named = list(params.named_parameters(trainable_only=True))
    train_feats = list(train_feats)
    for epoch in range(start_epoch, cfg.epochs + 1):
        lr = learning_rate(cfg, epoch)
        order = rng.permutation(len(train_feats))
        sums = np.zeros(3)
        grad_norms = []
        for chunk in iter_batches(train_feats, cfg.batch_size, order):
            chunk = mask_unknown_words(chunk, cfg.unk_mask_rate, rng)
            batch = collate(chunk, contextual, cfg.cove_dim if cfg.use_cove else None)
            total, ls, lc, _ = compute_loss(params, batch, cfg, training=True, rng=rng)
            for _, p in named:
                p.zero_grad()
            T.backward(total, wrt=[p for _, p in named])
            grads = {name: p.grad for name, p in named}
            grad_norms.append(clip_gradients(grads, cfg.grad_clip))
            adamax_step(named, grads, opt, lr)
            sums += np.array([total.item(), ls.item(), lc.item()]) * len(chunk)
        sums /= len(train_feats)
        record = {"epoch": epoch, "lr": lr, "train_loss": float(sums[0]), "train_span_loss": float(sums[1]),
                  "train_cls_loss": float(sums[2]), "max_grad_norm": float(max(grad_norms))}
        if dev_examples:
            dev = evaluate_split(params, dev_examples, dev_feats, cfg, contextual)
            record.update({f"dev_{k}": v for k, v in dev.items()})
            score = dev["f1"]
        else:
            score = -float(sums[0])
        improved = score > best_f1
        if improved:
            best_f1, best_epoch = score, epoch
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if ckpt_dir is not None:
            with open(ckpt_dir / "metrics.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")
            save_checkpoint(ckpt_dir / "last.npz", params, cfg, opt, epoch, rng, history, best_f1, best_epoch)
            if improved:
                save_checkpoint(ckpt_dir / "best.npz", params, cfg, opt, epoch, rng, history, best_f1, best_epoch)
    return TrainResult(params, history, best_f1, best_epoch, opt)
