"""Per-dataset hyperparameter bundles (look-back 336, 16 heads, FFN width 256).

Patch/stride lists differ between the short horizons (96, 192) and the long
ones (336, 720). Every layer of a preset uses the same branch list.
"""
from __future__ import annotations

from .errors import ConfigError
from .model import LayerConfig, ModelConfig
from .tokenizer import BranchConfig
from .training import TrainConfig

HORIZONS = (96, 192, 336, 720)
DEFAULT_SEQ_LEN = 336
DEFAULT_HEADS = 16
DEFAULT_FFN_HIDDEN = 256

ETT_SPLIT = (0.6, 0.2, 0.2)
OTHER_SPLIT = (0.7, 0.1, 0.2)

# name: layers, (short P, short S), (long P, long S), ffn dropout, fuse dropout, batch, lr, split
PRESETS = {
    "traffic": (1, ([8, 16, 48], [4, 8, 24]), ([8, 32, 96], [4, 16, 48]), 0.2, 0.0, 10, 5e-4, OTHER_SPLIT),
    "electricity": (1, ([8, 16, 48], [4, 8, 24]), ([8, 32, 96], [4, 16, 48]), 0.2, 0.0, 32, 5e-4, OTHER_SPLIT),
    "weather": (2, ([24, 96], [12, 48]), ([16, 96], [8, 48]), 0.2, 0.0, 128, 5e-4, OTHER_SPLIT),
    "etth1": (2, ([8, 16], [4, 8]), ([8, 16], [4, 8]), 0.3, 0.1, 256, 1e-4, ETT_SPLIT),
    "etth2": (1, ([16, 96], [8, 48]), ([16, 96], [8, 48]), 0.3, 0.3, 256, 1e-4, ETT_SPLIT),
    "ettm1": (2, ([16, 96], [8, 48]), ([16, 96], [8, 48]), 0.2, 0.0, 128, 1e-4, ETT_SPLIT),
    "ettm2": (2, ([16, 96], [8, 48]), ([16, 96], [8, 48]), 0.2, 0.0, 128, 1e-4, ETT_SPLIT),
}
ALIASES = {"elc": "electricity", "ecl": "electricity"}


def _lookup(name):
    key = ALIASES.get(name.lower(), name.lower())
    if key not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return PRESETS[key]


def branches_for(name, horizon, heads=DEFAULT_HEADS):
    _, short, long_, *_ = _lookup(name)
    patches, strides = short if horizon <= 192 else long_
    return tuple(BranchConfig(p, s, heads) for p, s in zip(patches, strides))


def model_config(name, horizon, seq_len=DEFAULT_SEQ_LEN, **overrides):
    n_layers, _, _, ffn_do, fuse_do, *_ = _lookup(name)
    layer = LayerConfig(branches_for(name, horizon, overrides.pop("heads", DEFAULT_HEADS)))
    kw = dict(ffn_hidden=DEFAULT_FFN_HIDDEN, ffn_dropout=ffn_do, fuse_dropout=fuse_do)
    kw.update(overrides)
    return ModelConfig(seq_len, horizon, tuple(layer for _ in range(n_layers)), **kw)


def train_config(name, **overrides):
    *_, batch, lr, _ = _lookup(name)
    kw = dict(lr=lr, batch_size=batch)
    kw.update(overrides)
    return TrainConfig(**kw)


def split_ratios(name):
    return _lookup(name)[-1]
