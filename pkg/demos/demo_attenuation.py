"""
How the scale head damps large residuals
========================================

The Gaussian negative log-likelihood divides each residual's gradient by the
predicted variance, and at the best scale it grows only logarithmically.
"""

import numpy as np
from lsgvae.objective import (attenuation_weight, gaussian_nll, mse,
                              nll_at_optimal_sigma, optimal_sigma)

# Gradient with respect to the location for one residual of size 1
for sigma in (0.1, 1.0, 10.0, 100.0):
    w = attenuation_weight([2.0], [1.0], [sigma]).item()
    print(f"sigma={sigma:6.1f}  dNLL/dmu={w: .6f}")

# For a fixed residual the loss is smallest when sigma equals |residual|
grid = np.linspace(0.01, 10, 1000)
losses = [gaussian_nll([3.0], [1.0], [s]).item() for s in grid]
print("grid argmin:", grid[int(np.argmin(losses))], " closed form:",
      optimal_sigma([3.0], [1.0]).item())

# Logarithmic versus quadratic growth in the residual
for r in (1.0, 10.0, 1e3, 1e6):
    print(f"r={r:9.0f}  NLL at best sigma={nll_at_optimal_sigma(r).item():8.3f}"
          f"  squared error={mse([r], [0.0]).item():.3g}")
