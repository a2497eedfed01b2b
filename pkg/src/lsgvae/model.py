"""Location-scale Gaussian VAE forecaster.

Pipeline for a batch of look-back windows ``x[B, L, C]``:

1. instance statistics from the look-back, normalize, left-pad to ``N*P`` and
   cut into patches ``[B, C, N, P]``;
2. a ReLU MLP shared by all channels maps each patch to a hidden vector, two
   linear heads give the per-channel posterior ``(mu, softplus(.) + 1e-6)``
   which is mean-pooled over channels into an ``[N, D]`` grid; the latent is
   ``z_past = mu_z + noise * sigma_z``;
3. one affine map takes ``flatten(z_past)`` (``N*D``) to ``M*D`` future latents;
4. a single decoder (latent concatenated with a learned per-channel embedding,
   ReLU trunk, linear output of width ``2P``) runs on both past and future
   latents; the output is split in half into location and
   ``softplus(.) + xi`` scale, unpatched and mapped back to data units.

Parameter count, with ``W = hidden_width``, ``E = embed_dim``, ``k = enc_layers``::

    encoder    P*W + W + (k-1)*(W*W + W) + 2*(W*D + D)
    dynamics   (N*D)*(M*D) + M*D
    decoder    C*E + (D+E)*W + W + (k-1)*(W*W + W) + W*2P + 2P

For ``P=24, D=256, k=3, W=256`` and ``L=H=96, C=1`` that is 1,532,992.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from . import revin
from .autodiff import Tensor
from .data import SeriesWindow, left_pad, make_rng, padded_length
from .errors import ConfigurationError, DimensionError

SCALE_BIAS_INIT = math.log(math.expm1(1.0))  # softplus^-1(1) ~ 0.5413
POSTERIOR_FLOOR = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    L: int
    H: int
    C: int
    P: int = 24
    D: int = 256
    enc_layers: int = 3
    xi: float = 1e-6
    hidden_width: int = 256
    embed_dim: int = 16
    revin_eps: float = revin.DEFAULT_EPS

    def __post_init__(self):
        for name in ("L", "H", "C", "P", "D", "enc_layers", "hidden_width", "embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"model config {name} must be positive")
        if self.xi <= 0 or self.revin_eps <= 0:
            raise ConfigurationError("xi and revin_eps must be positive")

    @property
    def N(self) -> int:
        return -(-self.L // self.P)

    @property
    def M(self) -> int:
        return -(-self.H // self.P)

    @property
    def pad(self) -> int:
        return padded_length(self.L, self.P) - self.L

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    W, D, P = cfg.hidden_width, cfg.D, cfg.P
    shapes: dict[str, tuple[int, ...]] = {}
    fan = P
    for i in range(cfg.enc_layers):
        shapes[f"enc.{i}.W"] = (fan, W)
        shapes[f"enc.{i}.b"] = (W,)
        fan = W
    shapes["enc.mu.W"] = (W, D)
    shapes["enc.mu.b"] = (D,)
    shapes["enc.sigma.W"] = (W, D)
    shapes["enc.sigma.b"] = (D,)
    shapes["proj.W"] = (cfg.N * D, cfg.M * D)
    shapes["proj.b"] = (cfg.M * D,)
    shapes["dec.embed"] = (cfg.C, cfg.embed_dim)
    fan = D + cfg.embed_dim
    for i in range(cfg.enc_layers):
        shapes[f"dec.{i}.W"] = (fan, W)
        shapes[f"dec.{i}.b"] = (W,)
        fan = W
    shapes["dec.out.W"] = (W, 2 * P)
    shapes["dec.out.b"] = (2 * P,)
    return shapes


def param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count (see the module docstring)."""
    W, D, P, E, k = cfg.hidden_width, cfg.D, cfg.P, cfg.embed_dim, cfg.enc_layers
    encoder = P * W + W + (k - 1) * (W * W + W) + 2 * (W * D + D)
    dynamics = cfg.N * D * cfg.M * D + cfg.M * D
    decoder = cfg.C * E + (D + E) * W + W + (k - 1) * (W * W + W) + W * 2 * P + 2 * P
    return encoder + dynamics + decoder


class ModelParams:
    """Named leaf tensors for one model; names map to fixed shapes.

    Tensors are immutable, so an update builds a new ``ModelParams``.
    """

    def __init__(self, config: ModelConfig, arrays: Mapping[str, np.ndarray]):
        shapes = param_shapes(config)
        if set(arrays) != set(shapes):
            missing = sorted(set(shapes) - set(arrays))
            extra = sorted(set(arrays) - set(shapes))
            raise ConfigurationError(f"parameter names differ: missing={missing} extra={extra}")
        self.config = config
        self.tensors: dict[str, Tensor] = {}
        for name in sorted(shapes):
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != shapes[name]:
                raise DimensionError(f"{name}: expected shape {shapes[name]}, got {arr.shape}")
            self.tensors[name] = Tensor(arr, requires_grad=True, name=name)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    def replace(self, arrays: Mapping[str, np.ndarray]) -> "ModelParams":
        merged = self.arrays()
        merged.update(arrays)
        return ModelParams(self.config, merged)

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, scale bias at softplus^-1(1)."""
    rng = make_rng(seed, "init")
    arrays = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b"):
            arrays[name] = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(shape[0]) if name != "dec.embed" else 1.0
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    arrays["dec.out.b"][cfg.P:] = SCALE_BIAS_INIT
    return ModelParams(cfg, arrays)


# ---------------------------------------------------------------------------
# forward pieces


@dataclass
class LatentState:
    mu_z: Tensor            # [B, N, D]
    sigma_z: Tensor         # [B, N, D]
    z_past: Tensor          # [B, N, D]
    noise: np.ndarray       # [B, N, D]
    channel_mu_z: Tensor    # [B, C, N, D], before pooling
    channel_sigma_z: Tensor
    z_future: Tensor | None = None


@dataclass
class PredictiveDistribution:
    """Location and scale in data units, both ``[B, T, C]``."""

    mu: Tensor
    sigma: Tensor

    def numpy(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mu.numpy(), self.sigma.numpy()


def _mlp(x: Tensor, params: ModelParams, prefix: str, layers: int) -> Tensor:
    for i in range(layers):
        x = ad.relu(x @ params[f"{prefix}.{i}.W"] + params[f"{prefix}.{i}.b"])
    return x


def patch_batch(x_norm: np.ndarray, P: int) -> np.ndarray:
    """``[B, L, C]`` -> ``[B, C, N, P]`` after first-row left padding."""
    B, L, C = x_norm.shape
    Lp = padded_length(L, P)
    xp = left_pad(x_norm, Lp, axis=1)
    return np.ascontiguousarray(xp.transpose(0, 2, 1)).reshape(B, C, Lp // P, P)


def encode(patches, params: ModelParams, noise=None) -> LatentState:
    """Variational encoder with the reparameterization ``mu + noise * sigma``.

    ``patches`` is a :class:`~lsgvae.data.PatchGrid` or an array ``[B, C, N, P]``;
    ``noise`` has shape ``[B, N, D]`` (zeros when omitted).
    """
    cfg = params.config
    if hasattr(patches, "patches"):
        patches = np.asarray(patches.patches).transpose(2, 0, 1)[None]
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 4 or patches.shape[1:] != (cfg.C, cfg.N, cfg.P):
        raise DimensionError(
            f"patches must be [B, {cfg.C}, {cfg.N}, {cfg.P}], got {patches.shape}")
    B = patches.shape[0]
    h = _mlp(Tensor(patches), params, "enc", cfg.enc_layers)
    mu_c = h @ params["enc.mu.W"] + params["enc.mu.b"]
    sigma_c = ad.softplus(h @ params["enc.sigma.W"] + params["enc.sigma.b"]) + POSTERIOR_FLOOR
    mu_z = ad.mean(mu_c, axes=1)
    sigma_z = ad.mean(sigma_c, axes=1)
    if noise is None:
        noise = np.zeros((B, cfg.N, cfg.D))
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (B, cfg.N, cfg.D):
        raise DimensionError(f"noise must be {(B, cfg.N, cfg.D)}, got {noise.shape}")
    z_past = mu_z + sigma_z * noise
    return LatentState(mu_z, sigma_z, z_past, noise, mu_c, sigma_c)


def evolve(z_past: Tensor, params: ModelParams) -> Tensor:
    """One affine map from the flattened past latent grid to the future grid."""
    cfg = params.config
    z_past = ad.as_tensor(z_past)
    if z_past.ndim == 2:
        z_past = ad.reshape(z_past, (1,) + z_past.shape)
    B = z_past.shape[0]
    flat = ad.flatten(z_past, 1)
    out = flat @ params["proj.W"] + params["proj.b"]
    return ad.reshape(out, (B, cfg.M, cfg.D))


def decode_normalized(z: Tensor, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Shared decoder in normalized units: ``[B, K, D]`` -> two ``[B, K*P, C]``."""
    cfg = params.config
    z = ad.as_tensor(z)
    if z.ndim == 2:
        z = ad.reshape(z, (1,) + z.shape)
    B, K, D = z.shape
    C, E = cfg.C, cfg.embed_dim
    zc = ad.broadcast_to(ad.reshape(z, (B, 1, K, D)), (B, C, K, D))
    emb = ad.broadcast_to(ad.reshape(params["dec.embed"], (1, C, 1, E)), (B, C, K, E))
    h = _mlp(ad.concat([zc, emb], axis=-1), params, "dec", cfg.enc_layers)
    out = h @ params["dec.out.W"] + params["dec.out.b"]
    loc, scale_pre = ad.split(out, 2, axis=-1)
    loc = ad.swapaxes(ad.reshape(loc, (B, C, K * cfg.P)), 1, 2)
    sigma = ad.softplus(ad.swapaxes(ad.reshape(scale_pre, (B, C, K * cfg.P)), 1, 2)) + cfg.xi
    return loc, sigma


def decode(z, params: ModelParams, stats: revin.InstanceStats,
           span: str | None = None) -> PredictiveDistribution:
    """Decode latents and map to data units.

    ``span="past"`` drops the padded prefix; ``span="future"`` trims to ``H``
    steps; ``None`` keeps all ``K*P`` steps.
    """
    cfg = params.config
    loc, sigma = decode_normalized(z, params)
    if span == "past" and cfg.pad:
        loc, sigma = loc[:, cfg.pad:, :], sigma[:, cfg.pad:, :]
    elif span == "future" and loc.shape[1] != cfg.H:
        loc, sigma = loc[:, :cfg.H, :], sigma[:, :cfg.H, :]
    return PredictiveDistribution(revin.denorm_location(loc, stats),
                                  revin.denorm_scale(sigma, stats))


@dataclass
class ForwardResult:
    recon: PredictiveDistribution
    pred: PredictiveDistribution
    latent: LatentState
    stats: revin.InstanceStats


def _as_lookback(window, cfg: ModelConfig) -> np.ndarray:
    x = window.lookback if isinstance(window, SeriesWindow) else window
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (cfg.L, cfg.C):
        raise DimensionError(f"look-back must be [B, {cfg.L}, {cfg.C}], got {x.shape}")
    return x


def forward(window, params: ModelParams, mode: str = "mean",
            rng: np.random.Generator | None = None, noise=None) -> ForwardResult:
    """Full pass on a window (or look-back array ``[B, L, C]``).

    ``mode`` is ``"mean"`` (zero latent noise), ``"train"`` or ``"sample"``
    (standard-normal latent noise from ``rng``).  An explicit ``noise`` array
    overrides the mode.  Horizon values are never read.
    """
    cfg = params.config
    x = _as_lookback(window, cfg)
    B = x.shape[0]
    if noise is None:
        if mode == "mean":
            noise = np.zeros((B, cfg.N, cfg.D))
        elif mode in ("train", "sample"):
            if rng is None:
                raise ConfigurationError(f"mode {mode!r} needs an rng")
            noise = rng.standard_normal((B, cfg.N, cfg.D))
        else:
            raise ConfigurationError(f"unknown mode {mode!r}")
    stats = revin.fit(x, cfg.revin_eps)
    patches = patch_batch(revin.normalize(x, stats), cfg.P)
    latent = encode(patches, params, noise)
    latent.z_future = evolve(latent.z_past, params)
    recon = decode(latent.z_past, params, stats, span="past")
    pred = decode(latent.z_future, params, stats, span="future")
    return ForwardResult(recon, pred, latent, stats)


def sample_paths(window, params: ModelParams, S: int, rng: np.random.Generator,
                 with_obs_noise: bool = True, latent_noise: bool = True,
                 constant_sigma: float | np.ndarray | None = None) -> np.ndarray:
    """Draw ``S`` forecast paths ``[S, H, C]`` for one window.

    Each path gets fresh posterior latent noise (unless ``latent_noise`` is
    false) and, with ``with_obs_noise``, Gaussian observation noise scaled by
    the decoded sigma, or by ``constant_sigma`` when given.
    """
    if S < 1:
        raise ConfigurationError("need at least one sample path")
    cfg = params.config
    x = _as_lookback(window, cfg)
    if x.shape[0] != 1:
        raise DimensionError("sample_paths takes a single window")
    xs = np.broadcast_to(x, (S, cfg.L, cfg.C))
    noise = (rng.standard_normal((S, cfg.N, cfg.D)) if latent_noise
             else np.zeros((S, cfg.N, cfg.D)))
    res = forward(xs, params, noise=noise)
    mu, sigma = res.pred.numpy()
    if constant_sigma is not None:
        sigma = np.broadcast_to(np.asarray(constant_sigma, dtype=np.float64), mu.shape)
    if not with_obs_noise:
        return mu
    return mu + sigma * rng.standard_normal(mu.shape)
