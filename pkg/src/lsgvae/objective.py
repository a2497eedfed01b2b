"""Heteroscedastic ELBO, its homoscedastic MSE counterpart and analytic helpers.

All losses are graph-building functions over :class:`~lsgvae.autodiff.Tensor`
(plain arrays are accepted and treated as constants).  Batched inputs
``[B, T, C]`` are averaged over every entry, which equals the mean of the
per-window losses because windows share ``T`` and ``C``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError

XI = 1e-6


def _check_positive(sigma, what: str):
    values = sigma.data if isinstance(sigma, Tensor) else np.asarray(sigma)
    if np.any(values <= 0):
        raise ContractError(f"{what} must be strictly positive")


def _check_same_shape(*xs):
    shapes = {np.shape(x.data if isinstance(x, Tensor) else x) for x in xs}
    if len(shapes) != 1:
        raise DimensionError(f"shape mismatch: {sorted(shapes)}")


def gaussian_nll(u, mu, sigma) -> Tensor:
    """Mean over entries of ``log sigma + (u - mu)^2 / (2 sigma^2)``."""
    _check_same_shape(u, mu, sigma)
    _check_positive(sigma, "sigma")
    sigma = ad.as_tensor(sigma)
    resid = ad.sub(u, mu)
    return ad.mean(ad.log(sigma) + ad.square(resid) / (2.0 * ad.square(sigma)))


def kl_diag_gauss(mu_z, sigma_z) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) summed over latent entries, averaged over batch.

    Inputs of rank >= 3 are treated as ``[B, ...]``; lower ranks as one sample.
    """
    _check_same_shape(mu_z, sigma_z)
    _check_positive(sigma_z, "sigma_z")
    mu_z, sigma_z = ad.as_tensor(mu_z), ad.as_tensor(sigma_z)
    batch = mu_z.shape[0] if mu_z.ndim >= 3 else 1
    terms = ad.square(sigma_z) + ad.square(mu_z) - 1.0 - 2.0 * ad.log(sigma_z)
    return ad.sum(terms) * (0.5 / batch)


def mse(u, mu) -> Tensor:
    _check_same_shape(u, mu)
    return ad.mean(ad.square(ad.sub(u, mu)))


@dataclass(frozen=True)
class LossBreakdown:
    rec_nll: float
    pred_nll: float
    kl: float
    total: float
    beta: float

    def as_dict(self) -> dict:
        return {"rec_nll": self.rec_nll, "pred_nll": self.pred_nll, "kl": self.kl,
                "total": self.total, "beta": self.beta}


def _targets(window):
    if hasattr(window, "lookback"):
        x, y = window.lookback, window.horizon
    else:
        x, y = window
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.ndim == 2:
        x, y = x[None], y[None]
    return x, y


def composite_graph(recon, pred, window, latent, beta: float = 1.0,
                    loss: str = "nll") -> tuple[Tensor, tuple[Tensor, Tensor, Tensor]]:
    """Differentiable total plus its (rec, pred, kl) parts.

    ``loss="mse"`` swaps both likelihood terms for squared error, ignoring
    the scale head; the KL term is kept in both variants.
    """
    x, y = _targets(window)
    if loss == "nll":
        rec = gaussian_nll(x, recon.mu, recon.sigma)
        prd = gaussian_nll(y, pred.mu, pred.sigma)
    elif loss == "mse":
        rec = mse(x, recon.mu)
        prd = mse(y, pred.mu)
    else:
        raise ContractError(f"unknown loss {loss!r}")
    kl = kl_diag_gauss(latent.mu_z, latent.sigma_z)
    total = rec + prd + kl * beta
    return total, (rec, prd, kl)


def composite_loss(recon, pred, window, latent, beta: float = 1.0,
                   loss: str = "nll") -> LossBreakdown:
    total, (rec, prd, kl) = composite_graph(recon, pred, window, latent, beta, loss)
    return LossBreakdown(rec.item(), prd.item(), kl.item(), total.item(), float(beta))


def mse_loss(recon, pred, window) -> float:
    """Squared error averaged over all reconstruction and prediction entries."""
    x, y = _targets(window)
    rmu = recon.mu.data if isinstance(recon.mu, Tensor) else np.asarray(recon.mu)
    pmu = pred.mu.data if isinstance(pred.mu, Tensor) else np.asarray(pred.mu)
    _check_same_shape(x, rmu)
    _check_same_shape(y, pmu)
    sq = np.concatenate([((x - rmu) ** 2).ravel(), ((y - pmu) ** 2).ravel()])
    return float(sq.mean())


# ---------------------------------------------------------------------------
# analytic helpers


def attenuation_weight(u, mu, sigma) -> np.ndarray:
    """d(gaussian_nll)/d(mu) per entry: ``-(u - mu) / sigma^2 / count``."""
    u, mu, sigma = (np.asarray(a, dtype=np.float64) for a in (u, mu, sigma))
    _check_positive(sigma, "sigma")
    return -(u - mu) / sigma**2 / u.size


def optimal_sigma(u, mu, xi: float = XI) -> np.ndarray:
    """The scale minimizing the NLL at a fixed residual: ``max(|u - mu|, xi)``."""
    return np.maximum(np.abs(np.asarray(u, dtype=np.float64) - np.asarray(mu)), xi)


def nll_at_optimal_sigma(r) -> np.ndarray:
    """Per-entry NLL with sigma set to ``|r|``: ``log|r| + 1/2``."""
    return np.log(np.abs(np.asarray(r, dtype=np.float64))) + 0.5


def gaussian_kl_closed_form(mu: float, sigma: float) -> float:
    return 0.5 * (sigma**2 + mu**2 - 1.0 - 2.0 * math.log(sigma))
