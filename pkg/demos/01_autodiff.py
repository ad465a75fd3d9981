"""
Reverse-mode differentiation on numpy arrays
=============================================

Every op in ``rla.tensor`` records itself on the active ``GradientTape`` when
one of its inputs asks for a gradient. ``tape.backward`` walks the record in
reverse and returns a dict from tensor to gradient array.
"""

import numpy as np

from rla import tensor as T
from rla.tensor import GradientTape, Tensor

rng = np.random.default_rng(0)

# a one-layer network with a squared-error loss
W = Tensor(rng.normal(size=(3, 5)) * 0.3, requires_grad=True)
b = Tensor(np.zeros(3), requires_grad=True)
x = rng.normal(size=(4, 5))
y = rng.normal(size=(4, 3))

with GradientTape() as tape:
    out = T.tanh(T.linear(x, W, b))
    err = out - y
    loss = T.mean(err * err)
grads = tape.backward(loss)
print("loss", loss.item())
print("ops recorded", len(tape))

# compare against central differences
def numeric(arr, f, eps=1e-5):
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + eps
        up = f()
        arr[idx] = old - eps
        down = f()
        arr[idx] = old
        g[idx] = (up - down) / (2 * eps)
    return g


def f():
    e = T.tanh(T.linear(x, W, b)) - y
    return T.mean(e * e).item()


num = numeric(W.data, f)
print("max |autodiff - numeric| for W:", np.abs(grads[W] - num).max())

# seeding the backward pass directly with an upstream gradient
with GradientTape() as tape:
    h = T.sigmoid(T.linear(x, W, b))
upstream = np.ones_like(h.data)
g = tape.backward(seeds={h: upstream})
print("d(sum sigmoid)/db:", g[b])

# non-finite values are caught right after the op that made them
with T.checks(True):
    try:
        T.exp(np.array([1e4]))
    except Exception as exc:
        print("caught:", type(exc).__name__, exc)
