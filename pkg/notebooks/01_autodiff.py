"""
Reverse-mode autodiff in a few lines
====================================

Tensors remember the op that produced them, and ``backward`` walks that
record in reverse topological order.
"""

import numpy as np

from dcenet import autodiff as ad
from dcenet.autodiff import Tensor

# a tiny two-layer computation
x = Tensor(np.array([[0.1, 0.2]]), requires_grad=True)
w = Tensor(np.array([[0.3], [0.4]]), requires_grad=True)
y = ad.tsum(ad.tanh(x @ w))
ad.backward(y)
print("y =", y.item())
print("dy/dx =", x.grad)
print("dy/dw =", w.grad.ravel())

# the tape lists every recorded op, root last
tape = ad.Tape(y)
print([t.op_trace.name for t in tape.records if t.op_trace is not None])

# finite differences agree
err = ad.grad_check(lambda: ad.tsum(ad.tanh(x @ w)), [x, w])
print(f"max relative error vs central differences: {err:.2e}")

# inside no_grad nothing is recorded
with ad.no_grad():
    z = x @ w
print("recorded under no_grad:", z.op_trace is not None)
