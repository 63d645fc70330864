"""Command-line entry point: ``mtst {train,evaluate,forecast,ablate,synth}``.

Result files (metrics JSON, checkpoints, forecasts, ablation reports) never
contain wall-clock values, so reruns with the same seed are byte-identical.
Failures print one JSON line ``{"error": <kind>, "message": <text>}`` to
stderr and exit non-zero.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import checkpoint
from .data import MultivariateSeries, load_csv, make_windows, write_csv
from .errors import ConfigError, DataError, MTSTError
from .experiment import ABLATE_MODES, describe, fit_and_score, variant_config
from .runconfig import load_run_config, synth_from_spec
from .training import evaluate

log = logging.getLogger("mtst")


def _dump_json(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text)
    return text


def _out_dir(args, rc=None):
    out = args.out or os.environ.get("MTST_OUT") or (rc.out if rc else None) or "runs/default"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _metrics_block(m):
    return {"mse": m.mse, "mae": m.mae, "windows": m.windows, "variates": m.variates, "horizon": m.horizon}


def _run_meta(rc, series):
    return {
        "config_hash": rc.config_hash(),
        "data": rc.data,
        "split": list(rc.split),
        "variates": list(series.names),
    }


def cmd_train(args):
    rc = load_run_config(args.config)
    out = _out_dir(args, rc)
    series = rc.load_series()
    windows = make_windows(series, rc.split, rc.model.seq_len, rc.model.pred_len)
    history_path = out / "history.jsonl"
    with history_path.open("w") as hist:
        def on_epoch(rec):
            hist.write(json.dumps(rec, sort_keys=True) + "\n")
            hist.flush()

        from .model import MTST
        from .training import train

        model = MTST(rc.model, seed=rc.seed)
        train(model, windows, rc.train, on_epoch=on_epoch)
    checkpoint.save(out / "checkpoint.mtst", model, _run_meta(rc, series))
    metrics = {
        "config_hash": rc.config_hash(),
        "seed": rc.seed,
        "val": _metrics_block(evaluate(model, windows["val"])),
        "test": _metrics_block(evaluate(model, windows["test"])),
    }
    sys.stdout.write(_dump_json(out / "metrics.json", metrics))
    return 0


def _load_checkpoint_series(block, dataset):
    if dataset:
        return load_csv(dataset)
    data = block.get("data", {})
    if "synth" in data:
        return synth_from_spec(data["synth"])
    raise ConfigError("checkpoint does not record a synthetic source; pass --dataset")


def _check_variates(block, series):
    expected = len(block.get("variates", []))
    if expected and series.n_variates != expected:
        raise DataError(f"variate count mismatch: checkpoint expects {expected}, dataset has {series.n_variates}")


def cmd_evaluate(args):
    model, block = checkpoint.load(args.checkpoint)
    series = _load_checkpoint_series(block, args.dataset)
    _check_variates(block, series)
    cfg = model.config
    seq_len = args.seq_len if args.seq_len is not None else cfg.seq_len
    pred_len = args.pred_len if args.pred_len is not None else cfg.pred_len
    if (seq_len, pred_len) != (cfg.seq_len, cfg.pred_len):
        raise ConfigError(
            f"requested L={seq_len}, T={pred_len} but checkpoint has L={cfg.seq_len}, T={cfg.pred_len}"
        )
    split = args.split
    windows = make_windows(series, tuple(block["split"]), cfg.seq_len, cfg.pred_len)
    metrics = {"split": split, "config_hash": block.get("config_hash"), "seed": block.get("seed")}
    metrics.update(_metrics_block(evaluate(model, windows[split])))
    out = _out_dir(args)
    sys.stdout.write(_dump_json(out / f"eval_{split}.json", metrics))
    return 0


def cmd_forecast(args):
    model, block = checkpoint.load(args.checkpoint)
    if not args.dataset:
        raise ConfigError("forecast needs --dataset pointing at a look-back window CSV")
    with open(args.dataset, newline="") as fh:
        header = fh.readline().rstrip("\r\n")
    window = load_csv(args.dataset)
    _check_variates(block, window)
    cfg = model.config
    if len(window) != cfg.seq_len:
        raise DataError(f"forecast window must have exactly L={cfg.seq_len} rows, got {len(window)}")
    pred = model.predict_multivariate(window.values)
    stamps = None if window.timestamps is None else [f"t+{i + 1}" for i in range(cfg.pred_len)]
    result = MultivariateSeries(window.names, pred, stamps)
    out = Path(args.out or "forecast.csv")
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(result, out, header=None)
    # keep the caller's header line byte-for-byte
    lines = out.read_text().split("\n", 1)
    out.write_text(header + "\n" + lines[1])
    return 0


def _parse_seeds(spec, base):
    if spec is None:
        return [base]
    spec = str(spec)
    if "," in spec:
        return [int(s) for s in spec.split(",") if s.strip()]
    n = int(spec)
    if n < 1:
        raise ConfigError(f"--seeds must be >= 1, got {n}")
    return [base + i for i in range(n)]


def cmd_ablate(args):
    if args.mode not in ABLATE_MODES:
        raise ConfigError(f"invalid ablation mode {args.mode!r}; valid modes: {', '.join(ABLATE_MODES)}")
    rc = load_run_config(args.config)
    out = _out_dir(args, rc)
    series = rc.load_series()
    base_cfg = rc.model
    var_cfg = variant_config(base_cfg, args.mode)
    windows = make_windows(series, rc.split, base_cfg.seq_len, base_cfg.pred_len)
    report = {
        "mode": args.mode,
        "config_hash": rc.config_hash(),
        "seeds": [],
        "base": dict(describe(base_cfg), runs=[]),
        "variant": dict(describe(var_cfg), runs=[]),
        "deltas": [],
    }
    import dataclasses

    for seed in _parse_seeds(args.seeds, rc.seed):
        tc = dataclasses.replace(rc.train, seed=seed)
        row = {}
        for key, cfg in (("base", base_cfg), ("variant", var_cfg)):
            _, _, met = fit_and_score(series, rc.split, cfg, tc, seed, splits=("test",), windows=windows)
            report[key]["runs"].append(dict(_metrics_block(met["test"]), seed=seed))
            row[key] = met["test"]
        report["seeds"].append(seed)
        report["deltas"].append({
            "seed": seed,
            "mse": row["variant"].mse - row["base"].mse,
            "mae": row["variant"].mae - row["base"].mae,
        })
    for key in ("base", "variant"):
        runs = report[key]["runs"]
        report[key]["mse"] = float(np.mean([r["mse"] for r in runs]))
        report[key]["mae"] = float(np.mean([r["mae"] for r in runs]))
    sys.stdout.write(_dump_json(out / f"ablation_{args.mode}.json", report))
    return 0


def cmd_synth(args):
    spec = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"synth spec not found: {path}")
        spec = yaml.safe_load(path.read_text()) or {}
        if "synth" in spec:
            spec = spec["synth"]
    for key in ("seed", "length", "periods", "amplitudes", "slope", "sigma", "variates"):
        val = getattr(args, key, None)
        if val is not None:
            spec[key] = val
    series = synth_from_spec(spec)
    out = Path(args.out or "synth.csv")
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(series, out)
    return 0


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="mtst", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP threads")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train on a config; write checkpoint, history and metrics")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="output directory (overrides MTST_OUT and the config)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on one split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", help="CSV; defaults to the checkpoint's synthetic source")
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--seq-len", type=int, dest="seq_len")
    e.add_argument("--pred-len", type=int, dest="pred_len")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    f = sub.add_parser("forecast", help="forecast T steps from an L-row window CSV")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--dataset", required=True, help="look-back window CSV (exactly L rows)")
    f.add_argument("--out", help="forecast CSV path (default forecast.csv)")
    f.set_defaults(func=cmd_forecast)

    a = sub.add_parser("ablate", help="paired base-vs-variant training over seeds")
    a.add_argument("--config", required=True)
    a.add_argument("--mode", required=True, help=f"one of: {', '.join(ABLATE_MODES)}")
    a.add_argument("--seeds", help="count (N seeds from the config seed) or comma list")
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("synth", help="write a synthetic multi-periodic CSV")
    s.add_argument("--config", help="YAML synth spec")
    s.add_argument("--out", help="CSV path (default synth.csv)")
    s.add_argument("--seed", type=int)
    s.add_argument("--length", type=int)
    s.add_argument("--periods", type=_floats)
    s.add_argument("--amplitudes", type=_floats)
    s.add_argument("--slope", type=float)
    s.add_argument("--sigma", type=float)
    s.add_argument("--variates", type=int)
    s.set_defaults(func=cmd_synth)
    return p


def _thread_limit(n):
    if n is None:
        return contextlib.nullcontext()
    if n < 1:
        raise ConfigError(f"--threads must be >= 1, got {n}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get("MTST_LOG_LEVEL", "WARNING").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except (MTSTError, OSError, ValueError, KeyError) as exc:
        kind = type(exc).__name__
        msg = str(exc).replace("\n", " ")
        sys.stderr.write(json.dumps({"error": kind, "command": args.command, "message": msg}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
