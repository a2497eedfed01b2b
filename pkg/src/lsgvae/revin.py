"""Reversible instance normalization without learned affine weights.

Statistics come from the look-back window only and are kept with a singleton
time axis (shape ``(..., 1, C)``) so they broadcast against ``(..., T, C)``
arrays or tensors.  The location inverse is ``x * std + mean``; the scale
inverse is ``s * std``.  Together they make the predictive pair equivariant
under ``y -> a*y + b`` with ``a > 0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ContractError

DEFAULT_EPS = 1e-5


@dataclass(frozen=True)
class InstanceStats:
    mean: np.ndarray
    std: np.ndarray
    eps: float = DEFAULT_EPS


def fit(lookback: np.ndarray, eps: float = DEFAULT_EPS) -> InstanceStats:
    """Per-channel mean and population std over the time axis (second to last)."""
    x = np.asarray(lookback, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[-2] < 1:
        raise ContractError("look-back must contain at least one step")
    mean = x.mean(axis=-2, keepdims=True)
    std = np.sqrt(((x - mean) ** 2).mean(axis=-2, keepdims=True))
    return InstanceStats(mean, np.maximum(std, eps), eps)


def normalize(x, stats: InstanceStats):
    return (x - stats.mean) / stats.std


def denorm_location(mu_norm, stats: InstanceStats):
    return mu_norm * stats.std + stats.mean


def denorm_scale(sigma_norm, stats: InstanceStats):
    values = sigma_norm.data if isinstance(sigma_norm, Tensor) else np.asarray(sigma_norm)
    if np.any(values <= 0):
        raise ContractError("scale must be strictly positive before denormalization")
    return sigma_norm * stats.std
