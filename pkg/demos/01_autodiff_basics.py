"""A tour of the tensor core: build an expression, differentiate it, check it.

The library ships its own reverse-mode autodiff on top of numpy. Every op
records its parents and a backward closure; calling backward() on a scalar
walks the graph once in reverse topological order.
"""

import numpy as np

import adaptgraph.tensor as T
from adaptgraph.tensor import Tensor

rng = np.random.default_rng(0)

w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
b = Tensor(np.zeros(4), requires_grad=True)
x = Tensor(rng.normal(size=(2, 3, 5)))  # a small batch of 3-channel points

print("forward: leaky_relu(w @ x + b), then sum everything to a scalar")
y = T.leaky_relu(T.pointwise_linear(x, w, b), 0.2)
loss = T.reduce_sum(y)
print("  loss =", loss.item())

loss.backward()
print("  dloss/db =", b.grad)

# finite-difference spot check on one weight entry
eps = 1e-6
w.data[1, 2] += eps
hi = T.reduce_sum(T.leaky_relu(T.pointwise_linear(x, w, b), 0.2)).item()
w.data[1, 2] -= 2 * eps
lo = T.reduce_sum(T.leaky_relu(T.pointwise_linear(x, w, b), 0.2)).item()
w.data[1, 2] += eps
fd = (hi - lo) / (2 * eps)
print(f"  dloss/dw[1,2]: analytic {w.grad[1, 2]:.8f}, finite diff {fd:.8f}")

print("\ninference mode: no_grad() skips graph construction entirely")
with T.no_grad():
    silent = T.reduce_sum(T.leaky_relu(T.pointwise_linear(x, w, b), 0.2))
print("  value agrees:", abs(silent.item() - loss.item()) < 1e-12,
      "| grad tracking off:", silent.requires_grad is False)
