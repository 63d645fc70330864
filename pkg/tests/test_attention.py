import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtst import autodiff as ad
from mtst.attention import (
    AttnWeights,
    attention_output,
    attention_scores,
    multi_head_attn,
    transformer_block,
)
from mtst.autodiff import Tensor
from mtst.errors import ShapeError


def make_weights(d, heads, f=6, seed=0, grad=False):
    rng = np.random.default_rng(seed)

    def t(*shape, scale=0.5):
        return Tensor(rng.uniform(-scale, scale, shape), requires_grad=grad)

    return AttnWeights(
        heads=heads, wq=t(d, d), wk=t(d, d), wv=t(d, d), wo=t(d, d),
        ffn_w1=t(f, d), ffn_b1=t(f), ffn_w2=t(d, f), ffn_b2=t(d),
        bn1_gamma=Tensor(np.ones(d), requires_grad=grad), bn1_beta=Tensor(np.zeros(d), requires_grad=grad),
        bn2_gamma=Tensor(np.ones(d), requires_grad=grad), bn2_beta=Tensor(np.zeros(d), requires_grad=grad),
    )


def test_zero_queries_uniform():
    y = Tensor(np.random.default_rng(0).standard_normal((5, 4)))
    alpha = attention_scores(y, Tensor(np.zeros((4, 4))), Tensor(np.eye(4)))
    np.testing.assert_allclose(alpha.data, np.full((5, 5), 0.2), rtol=1e-15)


def test_single_token_passthrough():
    y = Tensor([[1.0, -2.0, 3.0]])
    wv = np.random.default_rng(1).standard_normal((3, 3))
    alpha = attention_scores(y, Tensor(np.eye(3)), Tensor(np.eye(3)))
    assert alpha.data.tolist() == [[1.0]]
    np.testing.assert_allclose(attention_output(alpha, y, Tensor(wv)).data, y.data @ wv.T)


def test_identity_projections_hand_scores():
    y = np.array([[1.0, 0.0], [0.0, 1.0]])
    alpha = attention_scores(Tensor(y), Tensor(np.eye(2)), Tensor(np.eye(2))).data
    p = math.exp(1 / math.sqrt(2)) / (math.exp(1 / math.sqrt(2)) + 1)
    np.testing.assert_allclose(alpha, [[p, 1 - p], [1 - p, p]], rtol=1e-14)


def test_width_mismatch():
    with pytest.raises(ShapeError):
        attention_scores(Tensor(np.ones((3, 5))), Tensor(np.eye(4)), Tensor(np.eye(4)))
    with pytest.raises(ShapeError):
        multi_head_attn(Tensor(np.ones((1, 3, 6))), make_weights(4, 2))


def test_heads_must_divide():
    with pytest.raises(ShapeError):
        make_weights(6, 4)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.sampled_from([(4, 1), (4, 2), (6, 3), (8, 4)]), st.integers(0, 10**6))
def test_alpha_row_stochastic(j, dh, seed):
    d, h = dh
    rng = np.random.default_rng(seed)
    y = Tensor(rng.standard_normal((2, j, d)) * 3)
    bias = Tensor(rng.standard_normal((h, j, j)))
    _, alpha = multi_head_attn(y, make_weights(d, h, seed=seed), bias, return_alpha=True)
    assert alpha.shape == (2, h, j, j)
    assert np.all(alpha.data >= 0)
    np.testing.assert_allclose(alpha.data.sum(-1), 1.0, atol=1e-12)


def test_multi_head_matches_per_head_loop():
    d, h, j = 6, 3, 5
    w = make_weights(d, h, seed=3)
    rng = np.random.default_rng(3)
    y = rng.standard_normal((j, d))
    bias = rng.standard_normal((h, j, j))
    dh = d // h
    heads = []
    for k in range(h):
        sl = slice(k * dh, (k + 1) * dh)
        alpha = attention_scores(Tensor(y), Tensor(w.wq.data[sl]), Tensor(w.wk.data[sl]), Tensor(bias[k]))
        heads.append(attention_output(alpha, Tensor(y), Tensor(w.wv.data[sl])).data)
    ref = np.concatenate(heads, axis=1) @ w.wo.data.T
    got = multi_head_attn(Tensor(y), w, Tensor(bias)).data
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-14)


def test_literal_scale_differs():
    w = make_weights(4, 2, seed=4)
    y = Tensor(np.random.default_rng(4).standard_normal((1, 5, 4)))
    a = multi_head_attn(y, w).data
    b = multi_head_attn(y, w, literal_sqrt_d=True).data
    assert not np.allclose(a, b)


def test_block_shape_and_gradients():
    rng = np.random.default_rng(5)
    w = make_weights(4, 2, seed=5, grad=True)
    y = Tensor(rng.standard_normal((3, 5, 4)))
    out = transformer_block(y, w, training=True)
    assert out.shape == (3, 5, 4)
    # train-mode BN output is standardized per feature
    np.testing.assert_allclose(out.data.reshape(-1, 4).mean(0), 0.0, atol=1e-12)
    params = {k: getattr(w, k) for k in ("wq", "wk", "wv", "wo", "ffn_w1", "ffn_b1", "ffn_w2", "bn1_gamma", "bn2_beta")}
    g = Tensor(rng.standard_normal((3, 5, 4)))
    err = ad.finite_diff_check(lambda: ad.sum_(ad.mul(transformer_block(y, w, training=True), g)), params, h=1e-5)
    assert err < 1e-4
