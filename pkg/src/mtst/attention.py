"""Multi-head self-attention over patch tokens and the surrounding block.

Block structure (per branch)::

    Z'  = BN(Y + Attn(Y))
    Z'' = BN(Z' + FFN(Z'))

with a two-layer GELU feed-forward network of hidden width F. Batch norm
normalizes each feature over the (batch x tokens) axis.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor
from .errors import ShapeError

DEBUG = os.environ.get("MTST_DEBUG", "") not in ("", "0")


@dataclass
class AttnWeights:
    heads: int
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    bn1_gamma: Tensor
    bn1_beta: Tensor
    bn2_gamma: Tensor
    bn2_beta: Tensor
    bn1: BatchNormState = field(default=None)
    bn2: BatchNormState = field(default=None)

    def __post_init__(self):
        d = self.wq.shape[1]
        if d % self.heads:
            raise ShapeError(f"{self.heads} heads do not divide token width {d}")
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).shape != (d, d):
                raise ShapeError(f"{name} must be ({d}, {d}), got {getattr(self, name).shape}")
        if self.ffn_w1.shape[1] != d or self.ffn_w2.shape[0] != d:
            raise ShapeError(f"FFN must map width {d} to itself, got {self.ffn_w1.shape} / {self.ffn_w2.shape}")
        if self.bn1 is None:
            self.bn1 = BatchNormState(d)
        if self.bn2 is None:
            self.bn2 = BatchNormState(d)

    @property
    def dim(self):
        return self.wq.shape[1]

    @property
    def head_dim(self):
        return self.dim // self.heads


def _check_tokens(y, d):
    if y.shape[-1] != d:
        raise ShapeError(f"tokens have width {y.shape[-1]}, weights expect {d}")


def attention_scores(y, w_q, w_k, bias=None, scale=None):
    """Single-head scores: softmax_j(q_i . k_j * scale + bias_ij).

    ``w_q`` and ``w_k`` are (D_head, D); ``y`` is (..., J, D).
    """
    _check_tokens(y, w_q.shape[1])
    if scale is None:
        scale = 1.0 / math.sqrt(w_q.shape[0])
    q = ad.matmul(y, ad.swap_last(w_q))
    k = ad.matmul(y, ad.swap_last(w_k))
    s = ad.mul(ad.matmul(q, ad.swap_last(k)), scale)
    if bias is not None:
        j = y.shape[-2]
        if bias.shape[-2:] != (j, j):
            raise ShapeError(f"bias must end in ({j}, {j}), got {bias.shape}")
        s = ad.add(s, bias)
    return ad.softmax_rows(s)


def attention_output(alpha, y, w_v):
    """z_i = sum_j alpha_ij W_V y_j."""
    j = y.shape[-2]
    if alpha.shape[-2:] != (j, j):
        raise ShapeError(f"alpha must end in ({j}, {j}), got {alpha.shape}")
    return ad.matmul(alpha, ad.matmul(y, ad.swap_last(w_v)))


def _split_heads(x, heads):
    b, j, d = x.shape
    return ad.transpose(ad.reshape(x, (b, j, heads, d // heads)), (0, 2, 1, 3))


def multi_head_attn(y, w, bias=None, literal_sqrt_d=False, return_alpha=False):
    """All heads at once: (B, J, D) -> (B, J, D).

    Head h uses rows ``h*Dh:(h+1)*Dh`` of ``wq``/``wk``/``wv``. ``bias`` is
    (H, J, J) or None. Scores are scaled by 1/sqrt(D_head), or 1/sqrt(D)
    with ``literal_sqrt_d``.
    """
    squeeze = y.ndim == 2
    if squeeze:
        y = ad.reshape(y, (1,) + y.shape)
    _check_tokens(y, w.dim)
    b, j, d = y.shape
    h = w.heads
    scale = 1.0 / math.sqrt(d if literal_sqrt_d else w.head_dim)
    q = _split_heads(ad.matmul(y, ad.swap_last(w.wq)), h)
    k = _split_heads(ad.matmul(y, ad.swap_last(w.wk)), h)
    v = _split_heads(ad.matmul(y, ad.swap_last(w.wv)), h)
    s = ad.mul(ad.matmul(q, ad.swap_last(k)), scale)
    if bias is not None:
        if bias.shape != (h, j, j):
            raise ShapeError(f"bias must be ({h}, {j}, {j}), got {bias.shape}")
        s = ad.add(s, bias)
    alpha = ad.softmax_rows(s)
    if DEBUG:
        rows = alpha.data.sum(axis=-1)
        assert abs(rows - 1.0).max() < 1e-9 and alpha.data.min() >= 0.0, "attention rows are not stochastic"
    z = ad.matmul(alpha, v)
    z = ad.reshape(ad.transpose(z, (0, 2, 1, 3)), (b, j, d))
    out = ad.matmul(z, ad.swap_last(w.wo))
    if squeeze:
        out = ad.reshape(out, (j, d))
    return (out, alpha) if return_alpha else out


def feed_forward(x, w, dropout=0.0, rng=None, training=False):
    hidden = ad.gelu(ad.add(ad.matmul(x, ad.swap_last(w.ffn_w1)), w.ffn_b1))
    hidden = ad.dropout(hidden, dropout, rng, training)
    out = ad.add(ad.matmul(hidden, ad.swap_last(w.ffn_w2)), w.ffn_b2)
    return ad.dropout(out, dropout, rng, training)


def transformer_block(y, w, training=False, bias=None, dropout=0.0, rng=None, literal_sqrt_d=False):
    z1 = ad.batch_norm(
        ad.add(y, multi_head_attn(y, w, bias, literal_sqrt_d)),
        w.bn1_gamma, w.bn1_beta, w.bn1, training,
    )
    return ad.batch_norm(
        ad.add(z1, feed_forward(z1, w, dropout, rng, training)),
        w.bn2_gamma, w.bn2_beta, w.bn2, training,
    )
