"""Parameter containers and recurrent / feed-forward building blocks."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ParamGroup:
    """Mixin for dataclasses whose fields are tensors or nested groups."""

    def named_parameters(self, prefix: str = "", trainable_only: bool = False) -> Iterator[tuple[str, Tensor]]:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            name = prefix + f.name
            if isinstance(value, Tensor):
                if value.requires_grad or not trainable_only:
                    yield name, value
            elif isinstance(value, ParamGroup):
                yield from value.named_parameters(name + ".", trainable_only)

    def parameters(self, trainable_only: bool = True) -> list[Tensor]:
        return [p for _, p in self.named_parameters(trainable_only=trainable_only)]


class Initializer:
    """Seeded weight factory; every tensor it makes requires grad."""

    def __init__(self, rng: np.random.Generator, dtype=np.float32):
        self.rng = rng
        self.dtype = np.dtype(dtype)

    def uniform(self, shape, bound: float) -> Tensor:
        return Tensor(self.rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=self.dtype)

    def fan_in(self, n_in: int, n_out: int) -> Tensor:
        return self.uniform((n_in, n_out), 1.0 / np.sqrt(n_in))

    def zeros(self, shape) -> Tensor:
        return Tensor(np.zeros(shape), requires_grad=True, dtype=self.dtype)

    def array(self, values, trainable: bool = True) -> Tensor:
        return Tensor(np.array(values), requires_grad=trainable, dtype=self.dtype)


@dataclass
class FFNParams(ParamGroup):
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def create(cls, init: Initializer, n_in: int, n_out: int) -> "FFNParams":
        return cls(init.fan_in(n_in, n_out), init.zeros(n_out), init.fan_in(n_out, n_out), init.zeros(n_out))


def ffn(x: Tensor, p: FFNParams) -> Tensor:
    """Position-wise two-layer network: W2 relu(W1 x + b1) + b2."""
    return T.relu(x @ p.w1 + p.b1) @ p.w2 + p.b2


@dataclass
class LSTMParams(ParamGroup):
    # gate column order: input, forget, output, candidate
    w_ih: Tensor
    w_hh: Tensor
    b: Tensor

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[0]

    @classmethod
    def create(cls, init: Initializer, n_in: int, hidden: int) -> "LSTMParams":
        bound = 1.0 / np.sqrt(hidden)
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0
        return cls(init.uniform((n_in, 4 * hidden), bound), init.uniform((hidden, 4 * hidden), bound),
                   init.array(bias))


@dataclass
class BiLSTMParams(ParamGroup):
    fwd: LSTMParams
    bwd: LSTMParams

    @classmethod
    def create(cls, init: Initializer, n_in: int, hidden: int) -> "BiLSTMParams":
        return cls(LSTMParams.create(init, n_in, hidden), LSTMParams.create(init, n_in, hidden))


def lstm(x: Tensor, mask: np.ndarray, p: LSTMParams, reverse: bool = False) -> Tensor:
    """Run one LSTM direction over ``x`` (batch, time, features).

    State only advances on unmasked steps, so a reversed pass starts at each
    sequence's true last token.  Outputs at masked steps are zero.
    """
    batch, steps, _ = x.shape
    H = p.hidden
    projected = x @ p.w_ih + p.b
    h = Tensor(np.zeros((batch, H), dtype=x.dtype))
    c = h
    outputs: list[Tensor] = [None] * steps  # type: ignore[list-item]
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        gates = projected[:, t] + h @ p.w_hh
        sig = T.sigmoid(gates[:, :3 * H])
        cand = T.tanh(gates[:, 3 * H:])
        c_new = sig[:, H:2 * H] * c + sig[:, :H] * cand
        h_new = sig[:, 2 * H:] * T.tanh(c_new)
        live = mask[:, t:t + 1]
        c = T.where(live, c_new, c)
        h = T.where(live, h_new, h)
        outputs[t] = h
    out = T.stack(outputs, axis=1)
    return T.where(mask[:, :, None], out, 0.0)


def bilstm(x: Tensor, mask: np.ndarray, p: BiLSTMParams) -> Tensor:
    return T.concat([lstm(x, mask, p.fwd), lstm(x, mask, p.bwd, reverse=True)], axis=-1)


@dataclass
class GRUParams(ParamGroup):
    # input weights for update, reset and candidate; recurrent weights for update and reset
    w_x: Tensor
    w_h: Tensor
    u_h: Tensor
    b: Tensor

    @classmethod
    def create(cls, init: Initializer, n_in: int, hidden: int) -> "GRUParams":
        bound = 1.0 / np.sqrt(hidden)
        return cls(init.uniform((n_in, 3 * hidden), bound), init.uniform((hidden, 2 * hidden), bound),
                   init.uniform((hidden, hidden), bound), init.zeros(3 * hidden))


def gru_cell(s_prev: Tensor, x: Tensor, p: GRUParams) -> Tensor:
    """s = (1 - z) * s_prev + z * tanh(W x + U (r * s_prev) + b)."""
    H = s_prev.shape[-1]
    xw = x @ p.w_x + p.b
    gates = T.sigmoid(xw[:, :2 * H] + s_prev @ p.w_h)
    z, r = gates[:, :H], gates[:, H:]
    cand = T.tanh(xw[:, 2 * H:] + (r * s_prev) @ p.u_h)
    return s_prev + z * (cand - s_prev)
