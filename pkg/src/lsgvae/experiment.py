"""Run configuration and the end-to-end pipelines behind the command line.

A run configuration is one JSON document::

    {
      "data":  {"csv": null, "kind": "periodic", "length": 4000, "dt": 0.1,
                "regime_len": 100, "seed": 0, "split": [0.7, 0.1, 0.2],
                "standardize": true},
      "model": {"L": 96, "H": 96, "P": 24, "D": 256, "enc_layers": 3,
                "hidden_width": 256, "embed_dim": 16, "xi": 1e-06},
      "train": {"lr": 0.001, "batch_size": 32, "max_epochs": 50, "patience": 10,
                "beta": 0.01, "seed": 0, "grad_clip": null, "loss": "nll", ...},
      "eval":  {"samples": 100, "levels": [0.1, ..., 0.9], "stride": null, "seed": 0},
      "out":   "runs/default"
    }

``data.csv`` wins over the synthetic fields when set.  The channel count of
the model is always taken from the data.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import (Dataset, Scaler, SyntheticSpec, chrono_split, gen_synthetic, load_csv,
                   make_rng, read_sigma_true)
from .errors import CompatibilityError, ConfigurationError
from .metrics import EvalConfig, EvalResult, evaluate
from .model import ModelConfig, ModelParams, forward, sample_paths
from .training import TrainConfig, TrainReport, residual_rmse, save_checkpoint, train


@dataclass(frozen=True)
class DataConfig:
    csv: str | None = None
    kind: str = "periodic"
    length: int = 4000
    dt: float = 0.1
    regime_len: int = 100
    seed: int = 0
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    standardize: bool = True

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(self.kind, self.length, self.dt, self.seed, self.regime_len)


MODEL_DEFAULTS = {"L": 96, "H": 96, "P": 24, "D": 256, "enc_layers": 3,
                  "hidden_width": 256, "embed_dim": 16, "xi": 1e-6}


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: dict = field(default_factory=lambda: dict(MODEL_DEFAULTS))
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    out: str = "runs/default"

    def to_dict(self) -> dict:
        return {"data": {**asdict(self.data), "split": list(self.data.split)},
                "model": dict(self.model), "train": self.train.to_dict(),
                "eval": {**asdict(self.eval), "levels": list(self.eval.levels)},
                "out": self.out}

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        unknown = set(d) - {"data", "model", "train", "eval", "out"}
        if unknown:
            raise ConfigurationError(f"unknown config sections {sorted(unknown)}")
        base = cls()
        try:
            data = DataConfig(**{**asdict(base.data), **d.get("data", {})})
            data = replace(data, split=tuple(data.split))
            model = {**base.model, **d.get("model", {})}
            unknown_model = set(model) - set(MODEL_DEFAULTS)
            if unknown_model:
                raise ConfigurationError(f"unknown model keys {sorted(unknown_model)}")
            tr = TrainConfig(**{**base.train.to_dict(), **d.get("train", {})})
            ev = {**asdict(base.eval), **d.get("eval", {})}
            ev["levels"] = tuple(ev["levels"])
            return cls(data, model, tr, EvalConfig(**ev), d.get("out", base.out))
        except TypeError as exc:
            raise ConfigurationError(f"bad config: {exc}") from None

    def model_config(self, channels: int) -> ModelConfig:
        return ModelConfig(C=channels, **self.model)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
        return path


def read_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(doc)


# ---------------------------------------------------------------------------
# data


@dataclass
class PreparedData:
    full: Dataset
    train: Dataset
    val: Dataset
    test: Dataset
    scaler: Scaler
    sigma_true: np.ndarray | None


def load_series(dc: DataConfig) -> tuple[Dataset, np.ndarray | None]:
    """Read the configured CSV (and a sibling ``sigma_true.csv``) or generate data."""
    if dc.csv is None:
        return gen_synthetic(dc.synthetic_spec())
    path = Path(dc.csv)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        first = fh.readline().split(",")[0].strip().lower()
    ds = load_csv(path, skip_first=first in ("date", "index"))
    sigma_path = path.parent / "sigma_true.csv"
    sigma = read_sigma_true(sigma_path) if sigma_path.is_file() else None
    if sigma is not None and len(sigma) != ds.length:
        sigma = None
    return ds, sigma


def prepare(cfg: RunConfig) -> PreparedData:
    full, sigma = load_series(cfg.data)
    L, H = cfg.model["L"], cfg.model["H"]
    tr, va, te = chrono_split(full, cfg.data.split, min_length=L + H)
    scaler = Scaler.fit(tr) if cfg.data.standardize else Scaler.identity(full.channels)
    return PreparedData(scaler.transform(full), scaler.transform(tr), scaler.transform(va),
                        scaler.transform(te), scaler, sigma)


# ---------------------------------------------------------------------------
# pipelines


def run_train(cfg: RunConfig, data: PreparedData | None = None, out_dir=None,
              ) -> tuple[ModelParams, TrainReport, PreparedData, dict]:
    """Train per ``cfg``; with ``out_dir`` also write checkpoint, log, report, config."""
    data = prepare(cfg) if data is None else data
    mc = cfg.model_config(data.full.channels)
    log_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg.write(out_dir / "config.json")
        log_fh = (out_dir / "train_log.jsonl").open("w", encoding="utf-8")

    def on_epoch(rec):
        if log_fh is not None:
            log_fh.write(json.dumps(rec.log_record(), sort_keys=True) + "\n")
            log_fh.flush()

    try:
        params, report = train(mc, cfg.train, (data.train, data.val), on_epoch=on_epoch)
    finally:
        if log_fh is not None:
            log_fh.close()
    extra = {"scaler_mean": data.scaler.mean.tolist(), "scaler_std": data.scaler.std.tolist()}
    if cfg.train.loss == "mse":
        extra["constant_sigma"] = residual_rmse(params, data.train)
    if out_dir is not None:
        save_checkpoint(params, out_dir / "checkpoint.json", cfg.train, extra)
        (out_dir / "train_report.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return params, report, data, extra


def check_compatible(params: ModelParams, cfg: RunConfig, channels: int) -> None:
    mc = params.config
    expected = {"L": cfg.model["L"], "H": cfg.model["H"], "C": channels,
                "P": cfg.model["P"], "D": cfg.model["D"]}
    diffs = {k: (getattr(mc, k), v) for k, v in expected.items() if getattr(mc, k) != v}
    if diffs:
        detail = ", ".join(f"{k}: checkpoint {a} vs run {b}" for k, (a, b) in diffs.items())
        raise CompatibilityError(f"checkpoint does not match data/config ({detail})")


def run_eval(params: ModelParams, data: PreparedData, ec: EvalConfig,
             constant_sigma: float | None = None) -> EvalResult:
    return evaluate(params, data.test, ec, constant_sigma=constant_sigma,
                    sigma_true=data.sigma_true)


QUANTILE_COLUMNS = (("q05", 0.05), ("q25", 0.25), ("q50", 0.5), ("q75", 0.75), ("q95", 0.95))


def forecast_table(params: ModelParams, data: PreparedData, origin: int, samples: int,
                   seed: int = 0, constant_sigma: float | None = None) -> list[dict]:
    """Per-step forecast rows in data units for the horizon starting at ``origin``.

    ``origin`` indexes the full series; the look-back is ``[origin - L, origin)``.
    """
    mc = params.config
    T = data.full.length
    if not mc.L <= origin <= T:
        raise ConfigurationError(f"origin must lie in [{mc.L}, {T}], got {origin}")
    lookback = data.full.values[origin - mc.L:origin]
    mu_n = forward(lookback, params).pred
    mu = data.scaler.inverse_location(mu_n.mu.data[0])
    sigma = (np.full_like(mu, constant_sigma) if constant_sigma is not None
             else mu_n.sigma.data[0])
    sigma = data.scaler.inverse_scale(sigma)
    paths = sample_paths(lookback, params, samples, make_rng(seed, "eval", origin),
                         constant_sigma=constant_sigma)
    qs = data.scaler.inverse_location(
        np.quantile(paths, [q for _, q in QUANTILE_COLUMNS], axis=0, method="linear"))
    raw = data.scaler.inverse_location(data.full.values)
    rows = []
    for h in range(mc.H):
        t = origin + h
        for c in range(mc.C):
            row = {"t": t}
            if mc.C > 1:
                row["channel"] = data.full.channel_names[c]
            row["truth"] = float(raw[t, c]) if t < T else None
            row["mu"] = float(mu[h, c])
            row["sigma"] = float(sigma[h, c])
            for k, (name, _) in enumerate(QUANTILE_COLUMNS):
                row[name] = float(qs[k, h, c])
            rows.append(row)
    return rows


def write_rows(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else (repr(v) if isinstance(v, float) else v))
                        for k, v in r.items()})
    return path


ABLATION_VARIANTS = (("lsg-nll", "nll"), ("vanilla-mse", "mse"))


def run_ablate(cfg: RunConfig, out_dir=None) -> list[dict]:
    """Train the NLL model and the MSE variant on identical data and seeds."""
    data = prepare(cfg)
    rows = []
    for name, loss in ABLATION_VARIANTS:
        vcfg = replace(cfg, train=replace(cfg.train, loss=loss))
        sub = None if out_dir is None else Path(out_dir) / name
        params, report, _, extra = run_train(vcfg, data, sub)
        res = run_eval(params, data, cfg.eval, extra.get("constant_sigma"))
        row = {"variant": name, "crps": res.crps, "nmae": res.nmae, "qice": res.qice,
               "best_epoch": report.best_epoch}
        if res.volatility_rho is not None:
            row["volatility_rho"] = res.volatility_rho
        rows.append(row)
    if out_dir is not None:
        cfg.write(Path(out_dir) / "config.json")
        write_rows(rows, Path(out_dir) / "ablation.csv")
    return rows
