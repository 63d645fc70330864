"""Train-and-score helpers shared by the CLI and the experiment checks."""
from __future__ import annotations

from .data import make_windows
from .model import MTST, ablate
from .training import evaluate, train

# CLI ablation mode -> (ablate() kind, pe)
ABLATE_MODES = {
    "no-low-res": ("drop-lowest-res", None),
    "no-high-res": ("drop-highest-res", None),
    "sinape": ("pe-variant", "sinape"),
    "learnedape": ("pe-variant", "learnedape"),
    "nope": ("pe-variant", "none"),
}


def variant_config(config, mode):
    if mode not in ABLATE_MODES:
        raise ValueError(f"unknown ablation mode {mode!r}; valid modes: {', '.join(ABLATE_MODES)}")
    which, pe = ABLATE_MODES[mode]
    return ablate(config, which, pe=pe)


def fit_and_score(series, ratios, model_cfg, train_cfg, seed, splits=("val", "test"), windows=None):
    """Build a model from ``seed``, train it, return (model, history, {split: Metrics})."""
    if windows is None:
        windows = make_windows(series, ratios, model_cfg.seq_len, model_cfg.pred_len)
    model = MTST(model_cfg, seed=seed)
    _, history = train(model, windows, train_cfg)
    return model, history, {s: evaluate(model, windows[s]) for s in splits}


PE_LABELS = {"rpe": "RPE", "sinape": "SinAPE", "learnedape": "LearnedAPE", "none": "NoPE"}


def describe(config):
    return {
        "pe": PE_LABELS[config.pe],
        "patches": [[b.patch for b in layer.branches] for layer in config.layers],
        "strides": [[b.stride for b in layer.branches] for layer in config.layers],
    }
