"""Patch tokenization of a univariate representation.

Windows are described 0-based externally: token ``j`` (0-based) covers input
positions ``j*S .. j*S + P - 1``. When ``(d - P)`` is not a multiple of ``S``
the input is extended by copies of its final element so the last window is
full.
"""
from __future__ import annotations

import functools
import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .errors import ConfigError, ShapeError

log = logging.getLogger(__name__)

PE_KINDS = ("rpe", "sinape", "learnedape", "none")


@dataclass(frozen=True)
class BranchConfig:
    """One tokenizer + attention pipeline.

    ``heads`` is the requested head count; the effective count is the largest
    divisor of ``patch`` not above it (see :meth:`effective_heads`). ``d_pos``
    of ``None`` means the per-head width rounded up to an even number.
    """

    patch: int
    stride: int | None = None
    heads: int = 16
    d_pos: int | None = None

    def __post_init__(self):
        if self.stride is None:
            object.__setattr__(self, "stride", max(1, self.patch // 2))
        if self.patch < 1 or self.stride < 1:
            raise ConfigError(f"patch and stride must be positive, got P={self.patch} S={self.stride}")
        if self.stride > self.patch:
            raise ConfigError(f"stride {self.stride} exceeds patch size {self.patch}; gapped patches are not supported")
        if self.heads < 1:
            raise ConfigError(f"heads must be positive, got {self.heads}")
        if self.d_pos is not None and (self.d_pos < 2 or self.d_pos % 2):
            raise ConfigError(f"d_pos must be a positive even integer, got {self.d_pos}")

    @property
    def dim(self):
        return self.patch

    def effective_heads(self):
        return _resolve_heads(self.patch, self.heads)

    def head_dim(self):
        return self.patch // self.effective_heads()

    def pos_dim(self):
        if self.d_pos is not None:
            return self.d_pos
        dh = self.head_dim()
        return max(2, dh + dh % 2)


@functools.lru_cache(maxsize=None)
def _resolve_heads(patch, heads):
    h = max(k for k in range(1, min(heads, patch) + 1) if patch % k == 0)
    if h != heads:
        log.warning("branch P=%d: %d heads do not divide the token width; using %d", patch, heads, h)
    return h


@dataclass
class TokenMatrix:
    tokens: np.ndarray
    source_dim: int
    pad_count: int
    patch: int
    stride: int

    @property
    def n_patches(self):
        return self.tokens.shape[0]


def num_patches(d, patch, stride, where=""):
    """Token count J = ceil((d - P) / S) + 1."""
    if stride < 1:
        raise ConfigError(f"stride must be >= 1{where}, got {stride}")
    if patch > d:
        raise ConfigError(f"patch size {patch} exceeds input length {d}{where}")
    return -(-(d - patch) // stride) + 1


def pad_count(d, patch, stride):
    j = num_patches(d, patch, stride)
    return max(0, (j - 1) * stride + patch - d)


def tokenize(y, cfg):
    """Split a length-d vector into its J x P token matrix."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    d = y.size
    j = num_patches(d, cfg.patch, cfg.stride)
    tokens = kernels.unfold(y[None, :], cfg.patch, cfg.stride, j)[0]
    return TokenMatrix(tokens, d, pad_count(d, cfg.patch, cfg.stride), cfg.patch, cfg.stride)


def tokenize_backward(grad_tokens, meta):
    """Adjoint of :func:`tokenize` for the bookkeeping in ``meta``."""
    grad_tokens = np.asarray(grad_tokens, dtype=np.float64)
    if grad_tokens.shape != meta.tokens.shape:
        raise ShapeError(f"token gradient shape {grad_tokens.shape} != forward shape {meta.tokens.shape}")
    return kernels.fold(grad_tokens[None], meta.source_dim, meta.stride)[0]


def patchify(y, cfg, where=""):
    """Differentiable batched tokenizer: Tensor (B, d) -> Tensor (B, J, P)."""
    d = y.shape[-1]
    j = num_patches(d, cfg.patch, cfg.stride, where)
    return ad.unfold(y, cfg.patch, cfg.stride, j)


def coverage(d, patch, stride):
    """How many windows cover each input position (padding folded back)."""
    j = num_patches(d, patch, stride)
    return kernels.fold(np.ones((1, j, patch)), d, stride)[0]

