"""
Reverse-mode gradients and a finite-difference check
====================================================

Build a tiny two-layer network out of Tensor ops, backpropagate a scalar
loss, and compare every gradient entry with central differences.
"""

import numpy as np

from catrinet import tensor as T
from catrinet.tensor import Parameter, Tensor

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(5, 3)))
w1 = Parameter(rng.normal(size=(3, 4)))
w2 = Parameter(rng.normal(size=(4, 2)))


def loss():
    hidden = T.tanh(x @ w1)
    return T.log_softmax(hidden @ w2).sum() * -1.0


value = loss()
value.backward()
print("loss", value.item())

# central differences, one entry at a time
h = 1e-5
for name, p in (("w1", w1), ("w2", w2)):
    numeric = np.zeros_like(p.data)
    for idx in np.ndindex(p.shape):
        old = p.data[idx]
        p.data[idx] = old + h
        with T.no_grad():
            up = loss().item()
        p.data[idx] = old - h
        with T.no_grad():
            down = loss().item()
        p.data[idx] = old
        numeric[idx] = (up - down) / (2 * h)
    err = np.linalg.norm(p.grad - numeric) / np.linalg.norm(numeric)
    print(f"{name}: relative error {err:.2e}")

# NaN/Inf never propagates silently
try:
    Tensor([0.0]).log()
except FloatingPointError as exc:
    print("caught:", exc)
