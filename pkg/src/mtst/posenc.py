"""Positional encodings: signed relative sinusoids and the absolute variants.

The relative table maps an offset ``r = i - j`` to ``sign(r) * PE(|r|)``
where ``PE`` interleaves sines and cosines, component pairs ``(2k, 2k+1)``
at frequency ``10000 ** (-2k / d_pos)``.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError


def sinusoidal_pe(i, d_pos):
    if d_pos < 2 or d_pos % 2:
        raise ConfigError(f"sinusoidal encoding needs an even dimension, got {d_pos}")
    if i < 0:
        raise ValueError(f"offset must be non-negative, got {i}")
    return _sinusoid_rows(np.array([i], dtype=np.float64), d_pos)[0]


def _sinusoid_rows(positions, d_pos):
    k = np.arange(d_pos // 2)
    freq = 1.0 / 10000.0 ** (2.0 * k / d_pos)
    angles = positions[:, None] * freq[None, :]
    out = np.empty((positions.size, d_pos))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


@dataclass(frozen=True)
class RelPosTable:
    d_pos: int
    max_offset: int
    table: np.ndarray  # row r + max_offset holds the encoding of offset r

    def entry(self, r):
        if abs(r) > self.max_offset:
            raise IndexError(f"offset {r} outside +-{self.max_offset}")
        return self.table[r + self.max_offset]


@functools.lru_cache(maxsize=256)
def build_rel_table(n_tokens, d_pos):
    if n_tokens < 1:
        raise ConfigError(f"token count must be >= 1, got {n_tokens}")
    offsets = np.arange(-(n_tokens - 1), n_tokens)
    if d_pos < 2 or d_pos % 2:
        raise ConfigError(f"sinusoidal encoding needs an even dimension, got {d_pos}")
    table = np.sign(offsets)[:, None] * _sinusoid_rows(np.abs(offsets).astype(np.float64), d_pos)
    table.setflags(write=False)
    return RelPosTable(d_pos, n_tokens - 1, table)


def rpe_bias(table, w_pos, n_tokens):
    """Attention-score bias ``bias[h, i, j] = w_pos[h] . table[i - j]``.

    ``w_pos`` is a Tensor of shape (H, d_pos) or (d_pos,); the result is
    (H, J, J), or (J, J) for a 1-D ``w_pos``.
    """
    if table.max_offset < n_tokens - 1:
        raise ShapeError(f"table covers offsets up to {table.max_offset}, need {n_tokens - 1}")
    if w_pos.shape[-1] != table.d_pos:
        raise ShapeError(f"w_pos has {w_pos.shape[-1]} components, table has d_pos={table.d_pos}")
    lo = table.max_offset - (n_tokens - 1)
    rows = ad.Tensor(table.table[lo: lo + 2 * n_tokens - 1])
    flat = w_pos.ndim == 1
    w = ad.reshape(w_pos, (1, -1)) if flat else w_pos
    values = ad.matmul(rows, ad.swap_last(w))  # (2J-1, H)
    bias = ad.toeplitz(values, n_tokens)
    return ad.reshape(bias, (n_tokens, n_tokens)) if flat else bias


@functools.lru_cache(maxsize=256)
def sinusoidal_table(n_tokens, dim):
    """Fixed absolute table over token index; odd widths drop the last cosine."""
    width = dim + dim % 2
    table = _sinusoid_rows(np.arange(n_tokens, dtype=np.float64), width)[:, :dim]
    table.setflags(write=False)
    return table


def absolute_pe(kind, n_tokens, dim, learned=None):
    """Additive (J, D) offset for the absolute-encoding ablations."""
    if kind == "sinape":
        return ad.Tensor(sinusoidal_table(n_tokens, dim))
    if kind == "learnedape":
        if learned is None or learned.shape != (n_tokens, dim):
            got = None if learned is None else learned.shape
            raise ShapeError(f"learned positional table must be ({n_tokens}, {dim}), got {got}")
        return learned
    raise ConfigError(f"unknown absolute encoding kind {kind!r}")
