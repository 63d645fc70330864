"""YAML run configuration: data source, split, model and training settings.

See docs/config.md for the schema. Unknown keys are rejected so typos do
not silently fall back to defaults.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import presets
from .data import load_csv, synth_multi_periodic
from .errors import ConfigError
from .model import LayerConfig, ModelConfig
from .tokenizer import BranchConfig
from .training import TrainConfig

DATA_KEYS = {"path", "synth", "split"}
SYNTH_KEYS = {"seed", "length", "periods", "amplitudes", "slope", "sigma", "variates"}
MODEL_KEYS = {
    "preset", "seq_len", "pred_len", "layers", "n_layers", "patches", "strides", "heads",
    "d_pos", "ffn_hidden", "ffn_dropout", "fuse_dropout", "pe", "revin", "revin_affine",
    "share_wpos", "literal_sqrt_d",
}
TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed"}
TOP_KEYS = {"seed", "out", "data", "model", "train"}


def _check_keys(section, d, allowed):
    if not isinstance(d, dict):
        raise ConfigError(f"config section {section!r} must be a mapping")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(sorted(extra))}")


def synth_from_spec(spec):
    _check_keys("synth", spec, SYNTH_KEYS)
    if "periods" not in spec:
        raise ConfigError("synth spec needs 'periods'")
    periods = list(spec["periods"])
    return synth_multi_periodic(
        seed=int(spec.get("seed", 0)),
        length=int(spec.get("length", 2000)),
        periods=periods,
        amplitudes=list(spec.get("amplitudes", [1.0] * len(periods))),
        slope=float(spec.get("slope", 0.0)),
        sigma=float(spec.get("sigma", 0.0)),
        n_variates=int(spec.get("variates", 1)),
    )


def _model_from(d):
    _check_keys("model", d, MODEL_KEYS)
    d = dict(d)
    preset = d.pop("preset", None)
    seq_len = d.pop("seq_len", presets.DEFAULT_SEQ_LEN)
    if "pred_len" not in d:
        raise ConfigError("model.pred_len is required")
    pred_len = d.pop("pred_len")
    heads = d.pop("heads", presets.DEFAULT_HEADS)
    d_pos = d.pop("d_pos", None)
    layers = d.pop("layers", None)
    n_layers = d.pop("n_layers", None)
    patches, strides = d.pop("patches", None), d.pop("strides", None)
    if preset is not None:
        base = presets.model_config(preset, pred_len, seq_len, heads=heads)
        if layers is None and patches is None:
            layers = [
                {"branches": [{"patch": b.patch, "stride": b.stride} for b in l.branches]}
                for l in base.layers
            ]
        for k in ("ffn_hidden", "ffn_dropout", "fuse_dropout"):
            d.setdefault(k, getattr(base, k))
    if layers is None:
        if patches is None:
            raise ConfigError("model needs 'layers', 'patches' or a 'preset'")
        strides = strides or [max(1, p // 2) for p in patches]
        if len(strides) != len(patches):
            raise ConfigError(f"{len(patches)} patches but {len(strides)} strides")
        layers = [{"branches": [{"patch": p, "stride": s} for p, s in zip(patches, strides)]}] * int(n_layers or 1)
    built = []
    for n, layer in enumerate(layers):
        _check_keys(f"model.layers[{n}]", layer, {"branches", "d_out"})
        brs = []
        for b in layer["branches"]:
            _check_keys(f"model.layers[{n}].branches", b, {"patch", "stride", "heads", "d_pos"})
            brs.append(BranchConfig(int(b["patch"]), b.get("stride"), int(b.get("heads", heads)), b.get("d_pos", d_pos)))
        built.append(LayerConfig(tuple(brs), layer.get("d_out")))
    return ModelConfig(int(seq_len), int(pred_len), tuple(built), **d)


@dataclass
class RunConfig:
    data: dict
    split: tuple
    model: ModelConfig
    train: TrainConfig
    seed: int
    out: str
    base_dir: str = "."

    def resolved(self):
        """Canonical dict used for hashing (output location excluded)."""
        return {
            "data": self.data,
            "split": list(self.split),
            "model": self.model.to_dict(),
            "train": dataclasses.asdict(self.train),
            "seed": self.seed,
        }

    def config_hash(self):
        raw = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(raw).hexdigest()

    def dataset_path(self):
        p = Path(self.data["path"])
        return p if p.is_absolute() else Path(self.base_dir) / p

    def load_series(self):
        if "synth" in self.data:
            return synth_from_spec(self.data["synth"])
        return load_csv(self.dataset_path())


def parse_run_config(raw, base_dir="."):
    _check_keys("top level", raw, TOP_KEYS)
    data = raw.get("data")
    if data is None:
        raise ConfigError("config needs a 'data' section")
    _check_keys("data", data, DATA_KEYS)
    if ("path" in data) == ("synth" in data):
        raise ConfigError("data needs exactly one of 'path' or 'synth'")
    model_raw = raw.get("model")
    if model_raw is None:
        raise ConfigError("config needs a 'model' section")
    model = _model_from(model_raw)
    preset = model_raw.get("preset")
    split = data.get("split") or (presets.split_ratios(preset) if preset else presets.OTHER_SPLIT)
    split = tuple(float(r) for r in split)
    seed = int(raw.get("seed", 0))
    train_raw = dict(raw.get("train") or {})
    _check_keys("train", train_raw, TRAIN_KEYS)
    if preset:
        defaults = presets.train_config(preset)
        train_raw.setdefault("lr", defaults.lr)
        train_raw.setdefault("batch_size", defaults.batch_size)
    train = TrainConfig(seed=seed, **train_raw)
    out = os.environ.get("MTST_OUT") or raw.get("out") or "runs/default"
    data_clean = {k: v for k, v in data.items() if k != "split"}
    return RunConfig(data_clean, split, model, train, seed, str(out), str(base_dir))


def load_run_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config not found: {path}")
    with path.open() as fh:
        raw = yaml.safe_load(fh) or {}
    return parse_run_config(raw, base_dir=path.parent)
