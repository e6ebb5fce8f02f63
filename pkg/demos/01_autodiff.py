"""Reverse-mode gradients on a small expression, checked against finite differences."""

import numpy as np

from jointsan import tensor as T
from jointsan.gradcheck import numeric_gradient
from jointsan.tensor import Tensor

rng = T.make_rng(0)
x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)

# a masked softmax over the last axis, then a scalar readout
mask = np.array([[True, True], [True, False], [False, True]])
p = T.softmax(T.tanh(x @ w), axis=-1, mask=mask)
loss = (p * p).sum()
T.backward(loss)
print("loss", loss.item())
print("dloss/dw (reverse mode)\n", w.grad)


def value():
    return float((T.softmax(T.tanh(Tensor(x.data) @ Tensor(w.data)), axis=-1, mask=mask).data ** 2).sum())


fd = np.array([[numeric_gradient(value, w.data, (i, j)) for j in range(2)] for i in range(4)])
print("dloss/dw (central differences)\n", fd)
print("max abs difference", np.abs(fd - w.grad).max())

# extreme logits stay finite because the row maximum is subtracted first
print("softmax([1000, 0]) =", T.softmax(Tensor([1000.0, 0.0])).data)

# the graph is freed after one backward pass
try:
    T.backward(loss)
except Exception as exc:
    print("second backward:", type(exc).__name__, exc)
