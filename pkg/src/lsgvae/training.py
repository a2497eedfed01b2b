"""Mini-batch Adam training with early stopping, plus checkpoint I/O."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .data import Dataset, make_rng, window_arrays
from .errors import ConfigurationError, DomainError, FormatError, TrainingError
from .model import ModelConfig, ModelParams, forward, init_params
from .objective import LossBreakdown, composite_graph

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "lsgvae-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 10
    beta: float = 0.01
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float | None = None
    loss: str = "nll"

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigurationError("lr must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigurationError("batch_size and max_epochs must be at least 1")
        if not 0 <= self.patience <= self.max_epochs:
            raise ConfigurationError("patience must lie in [0, max_epochs]")
        if self.beta < 0:
            raise ConfigurationError("beta must be non-negative")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigurationError("grad_clip must be positive when set")
        if self.loss not in ("nll", "mse"):
            raise ConfigurationError(f"unknown loss {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def clip_by_global_norm(grads: Mapping[str, np.ndarray], max_norm: float):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm:
        return dict(grads), norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def adam_step(params, grads: Mapping[str, np.ndarray], state: AdamState,
              config: TrainConfig):
    """One bias-corrected Adam update.

    ``params`` is a :class:`ModelParams` or a plain name -> array mapping; the
    return value has the same kind.  The state is returned as a new object.
    """
    arrays = params.arrays() if isinstance(params, ModelParams) else dict(params)
    if set(grads) != set(arrays):
        raise TrainingError("gradient keys do not match parameter keys")
    for name in sorted(grads):
        if not np.all(np.isfinite(grads[name])):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    if config.grad_clip is not None:
        grads, _ = clip_by_global_norm(grads, config.grad_clip)
    b1, b2 = config.adam_beta1, config.adam_beta2
    t = state.step + 1
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new, m_new, v_new = {}, {}, {}
    for name in sorted(arrays):
        g = grads[name]
        m = b1 * state.m.get(name, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1.0 - b2) * g * g
        new[name] = arrays[name] - config.lr * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
        m_new[name], v_new[name] = m, v
    out_state = AdamState(t, m_new, v_new)
    if isinstance(params, ModelParams):
        return ModelParams(params.config, new), out_state
    return new, out_state


# ---------------------------------------------------------------------------
# loop


@dataclass
class EpochRecord:
    epoch: int
    train: LossBreakdown
    val: LossBreakdown
    elapsed_s: float

    def log_record(self) -> dict:
        return {"epoch": self.epoch, "rec_nll": self.train.rec_nll,
                "pred_nll": self.train.pred_nll, "kl": self.train.kl,
                "total": self.train.total, "val_total": self.val.total,
                "elapsed_s": round(self.elapsed_s, 3)}


@dataclass
class TrainReport:
    epochs: list[EpochRecord]
    best_epoch: int
    stopped_early: bool
    wall_time: float

    @property
    def best_val(self) -> LossBreakdown:
        return self.epochs[self.best_epoch - 1].val

    def to_dict(self) -> dict:
        return {"best_epoch": self.best_epoch, "stopped_early": self.stopped_early,
                "wall_time": self.wall_time,
                "epochs": [{"epoch": e.epoch, "train": e.train.as_dict(),
                            "val": e.val.as_dict(), "elapsed_s": e.elapsed_s}
                           for e in self.epochs]}


def batch_loss(params: ModelParams, lookback: np.ndarray, horizon: np.ndarray,
               beta: float, loss: str = "nll", mode: str = "train",
               rng: np.random.Generator | None = None, noise=None):
    """Forward pass plus composite objective on a stack of windows."""
    res = forward(lookback, params, mode, rng, noise)
    return composite_graph(res.recon, res.pred, (lookback, horizon), res.latent, beta, loss)


def _breakdown(total, parts, beta) -> LossBreakdown:
    rec, prd, kl = parts
    return LossBreakdown(rec.item(), prd.item(), kl.item(), total.item(), beta)


def _weighted(records: list[tuple[LossBreakdown, int]], beta: float) -> LossBreakdown:
    n = sum(w for _, w in records)
    avg = {k: sum(getattr(r, k) * w for r, w in records) / n
           for k in ("rec_nll", "pred_nll", "kl")}
    total = avg["rec_nll"] + avg["pred_nll"] + beta * avg["kl"]
    return LossBreakdown(avg["rec_nll"], avg["pred_nll"], avg["kl"], total, beta)


def evaluate_loss(params: ModelParams, ds: Dataset, beta: float, loss: str = "nll",
                  chunk: int = 256) -> LossBreakdown:
    """Composite loss over every stride-1 window of ``ds`` in mean mode."""
    cfg = params.config
    lb, hz, _ = window_arrays(ds, cfg.L, cfg.H, 1)
    if len(lb) == 0:
        raise ConfigurationError("dataset yields no windows")
    records = []
    for s in range(0, len(lb), chunk):
        total, parts = batch_loss(params, lb[s:s + chunk], hz[s:s + chunk], beta, loss,
                                  mode="mean")
        records.append((_breakdown(total, parts, beta), len(lb[s:s + chunk])))
    return _weighted(records, beta)


def train(model_config: ModelConfig, train_config: TrainConfig,
          datasets: tuple[Dataset, Dataset],
          params: ModelParams | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None
          ) -> tuple[ModelParams, TrainReport]:
    """Train on ``datasets = (train, val)`` and return the best-validation parameters."""
    train_ds, val_ds = datasets
    cfg, tc = model_config, train_config
    lb, hz, _ = window_arrays(train_ds, cfg.L, cfg.H, 1)
    if len(lb) == 0:
        raise ConfigurationError("training split yields no windows")
    if val_ds.length < cfg.L + cfg.H:
        raise ConfigurationError("validation split yields no windows")
    if params is None:
        params = init_params(cfg, tc.seed)
    shuffle_rng = make_rng(tc.seed, "shuffle")
    noise_rng = make_rng(tc.seed, "noise")
    state = AdamState()
    best_params, best_val, best_epoch = params, math.inf, 0
    history: list[EpochRecord] = []
    bad = 0
    stopped_early = False
    start = time.perf_counter()
    for epoch in range(1, tc.max_epochs + 1):
        order = shuffle_rng.permutation(len(lb))
        records = []
        for b, s in enumerate(range(0, len(order), tc.batch_size)):
            idx = order[s:s + tc.batch_size]
            try:
                total, parts = batch_loss(params, lb[idx], hz[idx], tc.beta, tc.loss,
                                          "train", noise_rng)
            except DomainError as exc:
                raise TrainingError(
                    f"epoch {epoch}, batch {b} (window origins {idx[:8].tolist()}...): {exc}"
                ) from exc
            grads = ad.grad(total, params.tensors)
            params, state = adam_step(params, grads, state, tc)
            records.append((_breakdown(total, parts, tc.beta), len(idx)))
        train_loss = _weighted(records, tc.beta)
        try:
            val_loss = evaluate_loss(params, val_ds, tc.beta, tc.loss)
        except DomainError as exc:
            raise TrainingError(f"epoch {epoch}: validation loss not finite: {exc}") from exc
        rec = EpochRecord(epoch, train_loss, val_loss, time.perf_counter() - start)
        history.append(rec)
        log.info("epoch %d train %.5f val %.5f", epoch, train_loss.total, val_loss.total)
        if on_epoch is not None:
            on_epoch(rec)
        if val_loss.total < best_val:
            best_params, best_val, best_epoch = params, val_loss.total, epoch
            bad = 0
        else:
            bad += 1
            if bad >= tc.patience:
                stopped_early = epoch < tc.max_epochs
                break
    report = TrainReport(history, best_epoch, stopped_early, time.perf_counter() - start)
    return best_params, report


def residual_rmse(params: ModelParams, ds: Dataset, chunk: int = 256) -> float:
    """RMSE of mean-mode horizon residuals over all stride-1 windows of ``ds``."""
    cfg = params.config
    lb, hz, _ = window_arrays(ds, cfg.L, cfg.H, 1)
    total, count = 0.0, 0
    for s in range(0, len(lb), chunk):
        mu = forward(lb[s:s + chunk], params).pred.mu.data
        total += float(np.sum((hz[s:s + chunk] - mu) ** 2))
        count += mu.size
    return math.sqrt(total / count)


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    params: ModelParams
    model_config: ModelConfig
    train_config: TrainConfig | None
    extra: dict


def _encode_float(v: float) -> str:
    return format(float(v), ".16e")


def checkpoint_text(params: ModelParams, train_config: TrainConfig | None = None,
                    extra: Mapping | None = None) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": params.config.to_dict(),
        "train_config": None if train_config is None else train_config.to_dict(),
        "extra": dict(extra or {}),
        "params": {name: {"shape": list(t.shape),
                          "values": [_encode_float(v) for v in t.data.ravel()]}
                   for name, t in params.tensors.items()},
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def save_checkpoint(params: ModelParams, path, train_config: TrainConfig | None = None,
                    extra: Mapping | None = None) -> Path:
    """Write a JSON checkpoint; values are 17-significant-digit decimal strings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(checkpoint_text(params, train_config, extra), encoding="utf-8")
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: not a valid checkpoint document ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: missing or wrong 'format' field")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    try:
        model_config = ModelConfig.from_dict(doc["model_config"])
        tc = doc.get("train_config")
        train_config = None if tc is None else TrainConfig.from_dict(tc)
        raw = doc["params"]
    except (KeyError, TypeError, ConfigurationError) as exc:
        raise FormatError(f"{path}: bad header ({exc})") from None
    arrays = {}
    for name in sorted(raw):
        entry = raw[name]
        try:
            shape = tuple(int(s) for s in entry["shape"])
            values = np.array([float(v) for v in entry["values"]], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: parameter {name!r} is malformed ({exc})") from None
        if values.size != int(np.prod(shape)):
            raise FormatError(f"{path}: parameter {name!r} has {values.size} values "
                              f"for shape {shape}")
        if not np.all(np.isfinite(values)):
            raise FormatError(f"{path}: parameter {name!r} holds non-finite values")
        arrays[name] = values.reshape(shape)
    try:
        params = ModelParams(model_config, arrays)
    except (ConfigurationError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    return Checkpoint(params, model_config, train_config, dict(doc.get("extra") or {}))
