"""Adam training on spliced windows, validation-based selection, MSE/MAE."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, ShapeError, TrainingError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 100
    patience: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float | None = None
    lr_decay: float | None = None  # multiply lr by this every lr_step epochs
    lr_step: int = 1

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError(f"learning rate must be non-negative, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError(f"Adam betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.epochs < 1 or self.patience < 0:
            raise ConfigError(f"need epochs >= 1 and patience >= 0, got {self.epochs}, {self.patience}")
        if self.clip is not None and self.clip <= 0:
            raise ConfigError(f"clip threshold must be positive, got {self.clip}")


@dataclass(frozen=True)
class Metrics:
    mse: float
    mae: float
    windows: int
    variates: int
    horizon: int

    def to_dict(self):
        return asdict(self)


def _check_pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred.shape} != ground-truth shape {truth.shape}")
    return pred, truth


def mse(pred, truth):
    """Mean squared error over every (window, step, variate) entry."""
    pred, truth = _check_pair(pred, truth)
    return float(np.mean((pred - truth) ** 2))


def mae(pred, truth):
    pred, truth = _check_pair(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


class AdamState:
    def __init__(self, params):
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0


def adam_step(params, grads, state, t, cfg, lr=None):
    """Bias-corrected Adam update of ``params`` (name -> Tensor) in place."""
    if t < 1:
        raise ValueError(f"Adam step index must be >= 1, got {t}")
    lr = cfg.lr if lr is None else lr
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ShapeError(f"{k}: gradient {g.shape} / moments {state.m[k].shape} vs parameter {p.shape}")
        m = state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g
        v = state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    state.t = t


def _clip(grads, threshold):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > threshold:
        scale = threshold / norm
        return {k: g * scale for k, g in grads.items()}
    return grads


def evaluate(model, windows, batch_size=256):
    """Eval-mode forecasts of every window, scored in the original data scale."""
    cfg = model.config
    if windows.seq_len != cfg.seq_len or windows.pred_len != cfg.pred_len:
        raise ShapeError(
            f"windows are L={windows.seq_len}, T={windows.pred_len}; model expects "
            f"L={cfg.seq_len}, T={cfg.pred_len}"
        )
    if len(windows) == 0:
        raise DataError(f"{windows.split} split has no windows")
    sq = ab = 0.0
    for i in range(0, len(windows), batch_size):
        idx = np.arange(i, min(i + batch_size, len(windows)))
        pred = model.predict_multivariate(windows.inputs(idx))
        err = pred - windows.targets(idx)
        sq += float(np.sum(err * err))
        ab += float(np.sum(np.abs(err)))
    n = len(windows) * cfg.pred_len * windows.n_variates
    return Metrics(sq / n, ab / n, len(windows), windows.n_variates, cfg.pred_len)


def train(model, splits, tc, on_epoch=None):
    """Mini-batch Adam with validation early stopping.

    ``splits`` maps "train" and "val" to WindowSets. The model ends up
    holding the parameters of the best validation epoch; those are also
    returned (as a state dict) with the per-epoch history.
    """
    train_set, val_set = splits.get("train"), splits.get("val")
    if train_set is None or len(train_set) == 0:
        raise DataError("training split is empty")
    if val_set is None or len(val_set) == 0:
        raise DataError("validation split is empty")
    params = dict(model.params.items())
    seeds = np.random.SeedSequence(tc.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    dropout_rng = np.random.default_rng(seeds[1])
    adam = AdamState(params)
    best_val, best_state, wait = math.inf, model.params.state_dict(), 0
    history = []
    start = time.perf_counter()
    n = len(train_set)
    for epoch in range(1, tc.epochs + 1):
        lr = tc.lr
        if tc.lr_decay is not None:
            lr *= tc.lr_decay ** ((epoch - 1) // tc.lr_step)
        order = shuffle_rng.permutation(n)
        total = 0.0
        for b, lo in enumerate(range(0, n, tc.batch_size)):
            idx = order[lo: lo + tc.batch_size]
            x, y = train_set.inputs(idx), train_set.targets(idx)
            model.params.zero_grad()
            with ad.Tape() as tape:
                loss = ad.mse_loss(model.forward_multivariate(x, training=True, rng=dropout_rng), ad.Tensor(y))
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            ad.backward_sweep(tape, loss)
            grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
            if tc.clip is not None:
                grads = _clip(grads, tc.clip)
            adam_step(params, grads, adam, adam.t + 1, tc, lr=lr)
            total += value * len(idx)
        val = evaluate(model, val_set).mse
        rec = {
            "epoch": epoch,
            "train_mse": total / n,
            "val_mse": val,
        }
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        # wall-clock time goes to the log only, so result files stay byte-reproducible
        log.info("epoch %d train_mse=%.6g val_mse=%.6g (%.1fs)", epoch, rec["train_mse"], val, time.perf_counter() - start)
        if val < best_val:
            best_val, best_state, wait = val, model.params.state_dict(), 0
        else:
            wait += 1
            if wait > tc.patience:
                log.info("early stop after %d epochs without improvement", wait)
                break
    model.params.load_state_dict(best_state)
    return best_state, history
