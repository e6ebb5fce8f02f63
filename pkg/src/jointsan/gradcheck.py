"""Central finite-difference checks of reverse-mode gradients.

Two families of checks are run in double precision:

* every differentiable primitive on random small inputs (``op:<name>``);
* every trainable parameter tensor of the joint loss on a toy model
  (d=4, m=3, n=4, T=3), both in eval mode and in training mode with frozen
  dropout masks.

For a parameter group the relative error is ``|a - f| / max(|a|, |f|, 1e-8)``
with norms taken over a random sample of coordinates, and separately over a
few random directional derivatives that touch every coordinate at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .data import NULL_ID, FeaturizedExample
from .model import ModelParams, collate, init_params
from .tensor import Tensor

EPS = 1e-3
TOLERANCE = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    a, f = np.ravel(analytic), np.ravel(numeric)
    return float(np.linalg.norm(a - f) / max(np.linalg.norm(a), np.linalg.norm(f), floor))


def numeric_gradient(fn: Callable[[], float], x: np.ndarray, index, eps: float = EPS) -> float:
    old = x[index]
    x[index] = old + eps
    up = fn()
    x[index] = old - eps
    down = fn()
    x[index] = old
    return (up - down) / (2 * eps)


def directional_derivative(fn: Callable[[], float], x: np.ndarray, direction: np.ndarray, eps: float = EPS) -> float:
    old = x.copy()
    x += eps * direction
    up = fn()
    x[...] = old - eps * direction
    down = fn()
    x[...] = old
    return (up - down) / (2 * eps)


@dataclass
class GradcheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = TOLERANCE

    def record(self, group: str, err: float) -> None:
        self.errors[group] = max(err, self.errors.get(group, 0.0))

    @property
    def failures(self) -> list[str]:
        return [g for g, e in self.errors.items() if not e < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> tuple[str, float]:
        return max(self.errors.items(), key=lambda kv: kv[1])

    def lines(self) -> list[str]:
        width = max(len(g) for g in self.errors)
        return [f"{g:<{width}}  {e:.3e}  {'ok' if e < self.tolerance else 'FAIL'}" for g, e in self.errors.items()]


# -- primitive ops ----------------------------------------------------------------
def _op_cases(rng: np.random.Generator):
    def r(*shape):
        return rng.normal(size=shape)

    def away_from_zero(*shape):
        x = r(*shape)
        return np.where(np.abs(x) < 0.2, np.sign(x) * 0.2 + x, x)

    mask = np.array([[True, True, False, True], [False, True, True, True]])
    idx = np.array([[0, 2], [3, 3]])
    return {
        "add": ([r(2, 3), r(3)], lambda a, b: a + b),
        "sub": ([r(2, 3), r(2, 1)], lambda a, b: a - b),
        "mul": ([r(2, 3), r(2, 3)], lambda a, b: a * b),
        "div": ([r(2, 3), 1.5 + rng.random((2, 3))], lambda a, b: a / b),
        "pow": ([1.0 + rng.random((3,))], lambda a: a ** 3),
        "matmul": ([r(2, 3, 4), r(4, 5)], T.matmul),
        "sum": ([r(2, 3, 4)], lambda a: a.sum(axis=1)),
        "mean": ([r(2, 3)], lambda a: a.mean(axis=0)),
        "reshape": ([r(2, 6)], lambda a: a.reshape(3, 4)),
        "transpose": ([r(2, 3, 4)], lambda a: a.transpose(2, 0, 1)),
        "getitem": ([r(4, 5)], lambda a: a[1:3, ::2] + a[[0, 0], 1:4] * a[idx[:, 0], 2:5]),
        "concat": ([r(2, 3), r(2, 2)], lambda a, b: T.concat([a, b], axis=1)),
        "stack": ([r(2, 3), r(2, 3)], lambda a, b: T.stack([a, b], axis=1)),
        "where": ([r(2, 4), r(2, 4)], lambda a, b: T.where(mask, a, b)),
        "clamp": ([0.5 * rng.random((2, 3)) + 0.2], lambda a: T.clamp(a, 0.0, 1.0)),
        "relu": ([away_from_zero(2, 3)], T.relu),
        "sigmoid": ([r(2, 3)], T.sigmoid),
        "tanh": ([r(2, 3)], T.tanh),
        "exp": ([r(2, 3)], T.exp),
        "log": ([0.5 + rng.random((2, 3))], T.log),
        "softmax": ([r(2, 4)], lambda a: T.softmax(a, axis=-1, mask=mask)),
    }


def check_ops(report: GradcheckReport, rng: np.random.Generator, eps: float = EPS) -> None:
    for name, (inputs, fn) in _op_cases(rng).items():
        leaves = [Tensor(x.copy(), requires_grad=True) for x in inputs]
        weight = rng.normal(size=fn(*[Tensor(x) for x in inputs]).shape)

        def scalar() -> float:
            return float(np.sum(fn(*[Tensor(leaf.data) for leaf in leaves]).data * weight))

        out = fn(*leaves)
        T.backward((out * Tensor(weight)).sum(), wrt=leaves)
        for leaf in leaves:
            numeric = np.zeros_like(leaf.data)
            for index in np.ndindex(leaf.shape):
                numeric[index] = numeric_gradient(scalar, leaf.data, index, eps)
            report.record(f"op:{name}", relative_error(leaf.grad, numeric))


# -- joint loss on a toy model ----------------------------------------------------------
TOY_VOCAB = 10


def toy_config(**overrides) -> TrainConfig:
    base = dict(d=4, steps=3, embedding_dim=5, pos_dim=3, ner_dim=2, dtype="float64",
                fine_tune_embeddings=True, variant="joint", lambda_cls=1.0, dropout=0.1, step_dropout=0.4)
    base.update(overrides)
    return TrainConfig(**base)


def toy_batch(rng: np.random.Generator, n: int = 4, m: int = 3):
    """Two examples: one answerable with full lengths, one unanswerable and shorter."""
    items = []
    for k, (plen, qlen, label) in enumerate(((n, m, 0), (n - 1, m - 1, 1))):
        pids = np.append(rng.integers(3, TOY_VOCAB, plen), NULL_ID)
        qids = rng.integers(3, TOY_VOCAB, qlen)
        feats = np.zeros((plen + 1, 4))
        feats[:plen, :3] = rng.integers(0, 2, (plen, 3))
        feats[:plen, 3] = rng.random(plen) / 2
        span = (1, 2) if label == 0 else (plen, plen)
        items.append(FeaturizedExample(f"toy-{k}", pids, qids, np.append(rng.integers(3, 5, plen), NULL_ID),
                                       np.append(rng.integers(3, 5, plen), NULL_ID), feats, span, label))
    return collate(items)


def toy_model(cfg: TrainConfig, rng: np.random.Generator) -> ModelParams:
    word = rng.normal(0, 0.5, (TOY_VOCAB, cfg.embedding_dim))
    return init_params(cfg, word, 5, 5, rng)


def check_joint_loss(report: GradcheckReport, cfg: TrainConfig, params: ModelParams, batch, rng: np.random.Generator,
                     training: bool, samples: int = 6, directions: int = 2, eps: float = EPS,
                     mask_seed: int = 7) -> None:
    from .training import compute_loss

    def loss_value() -> float:
        mask_rng = T.make_rng(mask_seed) if training else None
        return compute_loss(params, batch, cfg, training=training, rng=mask_rng)[0].item()

    named = list(params.named_parameters(trainable_only=True))
    for _, p in named:
        p.zero_grad()
    total = compute_loss(params, batch, cfg, training=training, rng=T.make_rng(mask_seed) if training else None)[0]
    T.backward(total, wrt=[p for _, p in named])
    suffix = " [train]" if training else ""
    for name, p in named:
        grad = p.grad.copy()
        flat = p.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(samples, flat.size), replace=False)
        numeric = np.array([numeric_gradient(loss_value, p.data, np.unravel_index(i, p.shape), eps) for i in picks])
        report.record(name + suffix, relative_error(grad.reshape(-1)[picks], numeric))
        for _ in range(directions):
            v = rng.normal(size=p.shape)
            v /= np.linalg.norm(v)
            num = directional_derivative(loss_value, p.data, v, eps)
            report.record(name + suffix, relative_error(np.sum(grad * v), num))


def run_gradcheck(seed: int = 0, tolerance: float = TOLERANCE, include_training: bool = True,
                  samples: int = 6, directions: int = 2, config: Optional[TrainConfig] = None) -> GradcheckReport:
    rng = T.make_rng(seed)
    report = GradcheckReport(tolerance=tolerance)
    check_ops(report, rng)
    cfg = config or toy_config()
    params = toy_model(cfg, rng)
    batch = toy_batch(rng)
    check_joint_loss(report, cfg, params, batch, rng, training=False, samples=samples, directions=directions)
    if include_training:
        check_joint_loss(report, cfg, params, batch, rng, training=True, samples=samples, directions=directions)
    return report
