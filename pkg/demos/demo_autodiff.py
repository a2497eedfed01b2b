"""
Reverse-mode gradients on numpy arrays
======================================

A short tour of the tensor type the model is built on.
"""

import numpy as np
from lsgvae import autodiff as ad

# Leaves that need gradients are created with requires_grad=True
w = ad.Tensor([[0.5, -1.0], [2.0, 0.25]], requires_grad=True)
x = np.array([[1.0, 2.0]])

# Every operation records its parents; nothing is computed lazily
y = ad.softplus(x @ w)
loss = ad.mean(ad.square(y))
print("loss:", loss.item())

# backward() walks the graph once and returns a gradient per leaf
g = ad.backward(loss)[w]
print("d loss / d w:\n", g)

# Compare against central differences of the same function
def f(arr):
    return float(np.mean(np.logaddexp(0.0, x @ arr) ** 2))

print("finite differences:\n", ad.numerical_grad(f, w.numpy()))

# Domain errors surface immediately instead of producing NaNs later
try:
    ad.log([1.0, -2.0])
except ValueError as err:
    print("refused:", err)
