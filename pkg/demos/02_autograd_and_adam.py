"""The small autodiff engine behind the models.

Builds a two-layer graph, checks one gradient against a central finite
difference, and minimizes a quadratic with the Adam optimizer.
"""

import numpy as np

from aad.tensor import Tensor, adam_step, backward, dense, init_adam, zero_grads

rng = np.random.default_rng(0)

# forward + backward through dense -> tanh -> squared sum
x = Tensor(rng.normal(size=(4, 3)))
w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
b = Tensor(np.zeros(2), requires_grad=True)
loss = (lambda y: (y * y).sum())(dense(x, w, b).tanh())
backward(loss)
print(f"loss = {float(loss.data):.4f}; dL/dW shape {w.grad.shape}")

# finite-difference spot check of one weight entry
h = 1e-6
wd = w.data.copy()
def loss_at(delta):
    w_probe = Tensor(wd + delta)
    y = dense(x, w_probe, Tensor(np.zeros(2))).tanh()
    return float((y * y).sum().data)
bump = np.zeros_like(wd)
bump[0, 0] = h
fd = (loss_at(bump) - loss_at(-bump)) / (2 * h)
print(f"dL/dW[0,0]: analytic {w.grad[0, 0]:.8f}, finite difference {fd:.8f}")

# Adam drives w^2 to zero
p = Tensor(np.array([1.0]), requires_grad=True)
state = init_adam([p], lr=0.1)
for step in range(200):
    zero_grads([p])
    backward((p * p).sum())
    adam_step([p], state)
print(f"after 200 Adam steps on f(w)=w^2 from w=1: |w| = {abs(p.data[0]):.2e}")
