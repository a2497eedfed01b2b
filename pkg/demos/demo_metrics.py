"""
Scoring sample forecasts
========================

CRPS rewards sharp and correct forecasts; QICE only checks calibration.
"""

import math

import numpy as np
from lsgvae.metrics import crps_samples, nmae, qice

rng = np.random.default_rng(0)
truth = rng.normal(size=(50, 40))

# A calibrated sampler: draws from the same distribution as the truth
good = rng.normal(size=(200, 50, 40))
# A vague one: centred correctly but ten times too wide
vague = 10 * rng.normal(size=(200, 50, 40))
# A sharp but biased one
biased = rng.normal(size=(200, 50, 40)) * 0.3 + 1.0

for name, s in (("calibrated", good), ("vague", vague), ("biased", biased)):
    print(f"{name:11s} CRPS={crps_samples(s, truth):.3f}  QICE={qice(s, truth):.3f}")

# Closed form for a standard normal scored at its mean
print("reference CRPS of N(0,1) at 0:", 2 / math.sqrt(2 * math.pi) - 1 / math.sqrt(math.pi))
print("NMAE of forecasting [2,3,4] for [1,2,3]:", nmae([2, 3, 4], [1, 2, 3]))
