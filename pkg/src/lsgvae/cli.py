"""Command-line entry point: ``lsgvae {synth,train,eval,forecast,ablate}``.

Settings resolve as defaults < ``--config`` JSON file < flags.  Every command
writes the resolved configuration as ``config.json`` next to its outputs.
Exit codes: 0 success, 1 internal error, 2 user or configuration error.
Log verbosity comes from the ``LSG_LOG`` environment variable (e.g. ``INFO``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .data import gen_synthetic, write_synthetic
from .errors import LSGError, TrainingError
from .experiment import (RunConfig, check_compatible, forecast_table, prepare, read_config,
                         run_ablate, run_eval, run_train, write_rows)
from .training import load_checkpoint

log = logging.getLogger("lsgvae")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lsgvae", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="seed for data, init, shuffling and eval")
    g = common.add_argument_group("data")
    g.add_argument("--data", help="CSV file (header row; optional date/index first column)")
    g.add_argument("--kind", choices=("periodic", "regime"), help="synthetic volatility profile")
    g.add_argument("--length", type=int)
    g.add_argument("--dt", type=float)
    g.add_argument("--regime-len", type=int)
    g = common.add_argument_group("model")
    g.add_argument("--lookback", type=int)
    g.add_argument("--horizon", type=int)
    g.add_argument("--patch", type=int)
    g.add_argument("--latent-dim", type=int)
    g = common.add_argument_group("training")
    g.add_argument("--lr", type=float)
    g.add_argument("--batch", type=int)
    g.add_argument("--epochs", "--max-epochs", dest="max_epochs", type=int)
    g.add_argument("--patience", type=int)
    g.add_argument("--beta", type=float)
    g.add_argument("--loss", choices=("nll", "mse"))
    g = common.add_argument_group("evaluation")
    g.add_argument("--samples", type=int)
    g.add_argument("--stride", type=int)

    sub.add_parser("synth", parents=[common], help="write a synthetic series")
    sub.add_parser("train", parents=[common], help="train and write a checkpoint")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    ev.add_argument("--checkpoint", required=True)
    fc = sub.add_parser("forecast", parents=[common], help="write per-step forecast quantiles")
    fc.add_argument("--checkpoint", required=True)
    fc.add_argument("--origin", type=int, required=True,
                    help="index of the first forecast step in the full series")
    sub.add_parser("ablate", parents=[common], help="compare NLL and MSE training")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = read_config(args.config) if args.config else RunConfig()
    d = cfg.to_dict()
    data, model, tr, ev = d["data"], d["model"], d["train"], d["eval"]
    if args.data is not None:
        data["csv"] = args.data
    for flag, key in (("kind", "kind"), ("length", "length"), ("dt", "dt"),
                      ("regime_len", "regime_len")):
        if getattr(args, flag) is not None:
            data[key] = getattr(args, flag)
            if args.data is None:
                data["csv"] = None
    for flag, key in (("lookback", "L"), ("horizon", "H"), ("patch", "P"),
                      ("latent_dim", "D")):
        if getattr(args, flag) is not None:
            model[key] = getattr(args, flag)
    for flag, key in (("lr", "lr"), ("batch", "batch_size"), ("max_epochs", "max_epochs"),
                      ("patience", "patience"), ("beta", "beta"), ("loss", "loss")):
        if getattr(args, flag) is not None:
            tr[key] = getattr(args, flag)
    if args.max_epochs is not None and tr["patience"] > tr["max_epochs"]:
        tr["patience"] = tr["max_epochs"]
    if args.samples is not None:
        ev["samples"] = args.samples
    if args.stride is not None:
        ev["stride"] = args.stride
    if args.seed is not None:
        data["seed"] = tr["seed"] = ev["seed"] = args.seed
    if args.out is not None:
        d["out"] = args.out
    return RunConfig.from_dict(d)


def cmd_synth(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    ds, sigma = gen_synthetic(cfg.data.synthetic_spec())
    write_synthetic(ds, sigma, out)
    cfg.write(out / "config.json")
    return out


def cmd_train(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    _, report, _, _ = run_train(cfg, out_dir=out)
    log.info("best epoch %d of %d", report.best_epoch, len(report.epochs))
    return out / "checkpoint.json"


def _load_for(cfg: RunConfig, checkpoint):
    ck = load_checkpoint(checkpoint)
    data = prepare(cfg)
    check_compatible(ck.params, cfg, data.full.channels)
    return ck, data


def cmd_eval(cfg: RunConfig, checkpoint) -> Path:
    ck, data = _load_for(cfg, checkpoint)
    res = run_eval(ck.params, data, cfg.eval, ck.extra.get("constant_sigma"))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.json")
    path = out / "eval.json"
    path.write_text(res.report_text(), encoding="utf-8")
    return path


def cmd_forecast(cfg: RunConfig, checkpoint, origin: int) -> Path:
    ck, data = _load_for(cfg, checkpoint)
    rows = forecast_table(ck.params, data, origin, cfg.eval.samples, cfg.eval.seed,
                          ck.extra.get("constant_sigma"))
    out = Path(cfg.out)
    cfg.write(out / "config.json")
    return write_rows(rows, out / "forecast.csv")


def cmd_ablate(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    run_ablate(cfg, out)
    return out / "ablation.csv"


def explicit_model_keys(args: argparse.Namespace) -> set[str]:
    keys = set()
    if args.config:
        keys |= set(json.loads(Path(args.config).read_text(encoding="utf-8")).get("model", {}))
    for flag, key in (("lookback", "L"), ("horizon", "H"), ("patch", "P"),
                      ("latent_dim", "D")):
        if getattr(args, flag) is not None:
            keys.add(key)
    return keys


def _model_from_checkpoint(cfg: RunConfig, checkpoint: str, explicit: set[str]) -> RunConfig:
    """Take model settings the user did not set explicitly from the checkpoint header.

    Explicit settings are kept so the compatibility check can reject them.
    """
    try:
        doc = json.loads(Path(checkpoint).read_text(encoding="utf-8"))
        header = doc["model_config"]
    except (OSError, ValueError, KeyError, TypeError):
        return cfg
    fill = {k: header[k] for k in cfg.model if k in header and k not in explicit}
    return replace(cfg, model={**cfg.model, **fill})


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("LSG_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "synth":
            result = cmd_synth(cfg)
        elif args.command == "train":
            result = cmd_train(cfg)
        elif args.command == "eval":
            cfg = _model_from_checkpoint(cfg, args.checkpoint, explicit_model_keys(args))
            result = cmd_eval(cfg, args.checkpoint)
        elif args.command == "forecast":
            cfg = _model_from_checkpoint(cfg, args.checkpoint, explicit_model_keys(args))
            result = cmd_forecast(cfg, args.checkpoint, args.origin)
        else:
            result = cmd_ablate(cfg)
    except TrainingError as exc:
        print(f"lsgvae: training failed: {exc}", file=sys.stderr)
        return 1
    except (LSGError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"lsgvae: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"lsgvae: internal error: {exc}", file=sys.stderr)
        return 1
    print(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
