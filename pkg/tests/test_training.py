import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import toy_config
from mtst import autodiff as ad
from mtst.data import WindowSet, make_windows, synth_multi_periodic
from mtst.errors import ConfigError, DataError, ShapeError, TrainingError
from mtst.model import MTST, LayerConfig, ModelConfig
from mtst.tokenizer import BranchConfig
from mtst.training import AdamState, TrainConfig, adam_step, evaluate, mae, mse, train
from oracles import loop_mae, loop_mse


def test_metric_hand_values():
    assert mse([2.0, 2.0], [0.0, 0.0]) == 4.0
    assert mae([2.0, 2.0], [0.0, 0.0]) == 2.0
    assert mse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0
    assert mse([1.0, -1.0, 3.0], [0.0, 0.0, 0.0]) == 11.0 / 3.0
    assert mae([1.0, -1.0, 3.0], [0.0, 0.0, 0.0]) == 5.0 / 3.0


def test_metric_shape_mismatch():
    with pytest.raises(ShapeError):
        mse(np.zeros(3), np.zeros(4))


@pytest.mark.parametrize("seed", range(10))
def test_metrics_match_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    p, t = rng.standard_normal((5, 4, 5)), rng.standard_normal((5, 4, 5))
    assert abs(mse(p, t) - loop_mse(t, p)) <= 1e-12
    assert abs(mae(p, t) - loop_mae(t, p)) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(-100, 100))
def test_metrics_translation_and_permutation(seed, c):
    rng = np.random.default_rng(seed)
    p, t = rng.standard_normal((6, 3)), rng.standard_normal((6, 3))
    assert mse(p + c, t + c) == pytest.approx(mse(p, t), rel=1e-9, abs=1e-12)
    perm = rng.permutation(6)
    assert mae(p[perm], t[perm]) == pytest.approx(mae(p, t), rel=1e-12)


def _scalar_adam(g, lr, t=1, b1=0.9, b2=0.999, eps=1e-8):
    m = (1 - b1) * g
    v = (1 - b2) * g * g
    return -lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)


def test_adam_first_step():
    p = {"w": ad.Tensor(np.array([0.5]))}
    adam_step(p, {"w": np.array([1.0])}, AdamState(p), 1, TrainConfig(lr=1e-3))
    delta = p["w"].data[0] - 0.5
    assert delta == pytest.approx(_scalar_adam(1.0, 1e-3), rel=1e-12)
    assert delta == pytest.approx(-1e-3, rel=1e-4)


def test_adam_zero_grad_and_lr_linearity():
    p = {"w": ad.Tensor(np.array([0.5, -2.0]))}
    adam_step(p, {"w": np.zeros(2)}, AdamState(p), 1, TrainConfig(lr=1e-3))
    assert p["w"].data.tolist() == [0.5, -2.0]
    g = np.array([0.3, -7.0])
    deltas = []
    for lr in (1e-3, 5e-4):
        q = {"w": ad.Tensor(np.zeros(2))}
        adam_step(q, {"w": g}, AdamState(q), 1, TrainConfig(lr=lr))
        deltas.append(q["w"].data.copy())
    np.testing.assert_allclose(deltas[1], deltas[0] / 2, rtol=1e-14)


def test_adam_errors():
    p = {"w": ad.Tensor(np.zeros(2))}
    with pytest.raises(ShapeError):
        adam_step(p, {"w": np.zeros(3)}, AdamState(p), 1, TrainConfig())
    with pytest.raises(ValueError):
        adam_step(p, {"w": np.zeros(2)}, AdamState(p), 0, TrainConfig())


def test_adam_deterministic_100_steps():
    outs = []
    for _ in range(2):
        rng = np.random.default_rng(0)
        p = {"w": ad.Tensor(rng.standard_normal(5))}
        st_ = AdamState(p)
        for t in range(1, 101):
            adam_step(p, {"w": np.sin(p["w"].data * t)}, st_, t, TrainConfig(lr=1e-2))
        outs.append(p["w"].data.tobytes())
    assert outs[0] == outs[1]


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr=-1)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(patience=-1)


def _sine_windows(n_rows=200, L=32, T=8):
    s = synth_multi_periodic(0, n_rows, [16], [1.0])
    return make_windows(s, (0.7, 0.1, 0.2), L, T)


def test_lr_zero_keeps_params():
    cfg = toy_config(n_layers=1)
    m = MTST(cfg, 0)
    init = {k: v.copy() for k, v in m.params.state_dict().items() if "running" not in k}
    _, hist = train(m, _sine_windows(), TrainConfig(lr=0.0, epochs=3, patience=5, batch_size=64))
    for k, v in init.items():
        np.testing.assert_array_equal(m.params[k].data, v)
    # batch-norm running stats are buffers and still move, so only train MSE is flat
    train_mse = [h["train_mse"] for h in hist]
    assert max(train_mse) - min(train_mse) < 1e-3 * train_mse[0]


@pytest.mark.parametrize("patience,scores,epochs", [
    (0, [1.0, 2.0, 0.5, 0.1], 2),
    (1, [1.0, 2.0, 3.0, 0.1], 3),
    (1, [1.0, 2.0, 0.5, 0.6, 0.7, 0.1], 5),
    (0, [3.0, 2.0, 1.0], 3),
])
def test_patience_rule(monkeypatch, patience, scores, epochs):
    from mtst import training

    seq = iter(scores)
    monkeypatch.setattr(training, "evaluate", lambda model, ws: training.Metrics(next(seq), 0.0, 1, 1, 8))
    m = MTST(toy_config(n_layers=1), 0)
    _, hist = train(m, _sine_windows(), TrainConfig(lr=1e-3, epochs=len(scores), patience=patience, batch_size=64))
    assert len(hist) == epochs


def test_best_state_restored():
    m = MTST(toy_config(n_layers=1), 0)
    w = _sine_windows()
    _, hist = train(m, w, TrainConfig(lr=3e-2, epochs=6, patience=10, batch_size=16))
    best = min(h["val_mse"] for h in hist)
    assert evaluate(m, w["val"]).mse == pytest.approx(best, rel=1e-12)


def test_training_deterministic():
    runs = []
    for _ in range(2):
        m = MTST(toy_config(n_layers=1, ffn_dropout=0.2, fuse_dropout=0.1), 0)
        _, hist = train(m, _sine_windows(), TrainConfig(lr=1e-3, epochs=2, batch_size=16, seed=4))
        runs.append((hist, b"".join(v.tobytes() for v in m.params.state_dict().values())))
    assert runs[0] == runs[1]


def test_empty_splits_rejected():
    w = _sine_windows()
    m = MTST(toy_config(n_layers=1), 0)
    with pytest.raises(DataError):
        train(m, {"train": w["train"]}, TrainConfig())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_reported():
    w = _sine_windows()
    bad = WindowSet(w["train"].values.copy(), w["train"].starts, 32, 8, "train")
    bad.values[40, 0] = np.inf
    m = MTST(toy_config(n_layers=1), 0)
    with pytest.raises(TrainingError, match=r"epoch 1, batch \d+"):
        train(m, {"train": bad, "val": w["val"]}, TrainConfig(batch_size=8))


class _Constant:
    """Stand-in model that always forecasts zeros."""

    def __init__(self, cfg):
        self.config = cfg

    def predict_multivariate(self, x):
        return np.zeros((x.shape[0], self.config.pred_len, x.shape[2]))


def test_evaluate_hand_dataset():
    cfg = ModelConfig(2, 1, (LayerConfig((BranchConfig(1, 1, heads=1),)),))
    values = np.array([[0.0], [0.0], [3.0], [-1.0], [2.0]])
    ws = WindowSet(values, np.arange(3), 2, 1, "test")
    m = evaluate(_Constant(cfg), ws)
    assert m.mse == (9 + 1 + 4) / 3
    assert m.mae == (3 + 1 + 2) / 3
    assert (m.windows, m.variates, m.horizon) == (3, 1, 1)
    dup = WindowSet(values, np.repeat(np.arange(3), 2), 2, 1, "test")
    assert evaluate(_Constant(cfg), dup).mse == m.mse


def test_evaluate_window_mismatch():
    m = MTST(toy_config(n_layers=1), 0)
    w = make_windows(synth_multi_periodic(0, 200, [16], [1.0]), (0.7, 0.1, 0.2), 16, 8)
    with pytest.raises(ShapeError):
        evaluate(m, w["test"])
