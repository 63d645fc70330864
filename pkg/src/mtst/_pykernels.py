"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable, and as the
reference side of the kernel benchmark. Every function here has the exact
signature and output of its compiled twin.
"""
import numpy as np


def _window_index(d, patch, stride, n_patches):
    idx = np.arange(n_patches)[:, None] * stride + np.arange(patch)[None, :]
    # replicate padding: indices past the end read the final element
    return np.minimum(idx, d - 1)


def unfold(x, patch, stride, n_patches):
    """(B, d) -> (B, J, P) sliding windows with tail replication."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    return x[:, _window_index(x.shape[1], patch, stride, n_patches)]


def fold(grad, d, stride):
    """Adjoint of :func:`unfold`: overlap-add (B, J, P) back onto (B, d)."""
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    b, n_patches, patch = grad.shape
    idx = _window_index(d, patch, stride, n_patches).ravel()
    out = np.empty((b, d))
    for row in range(b):
        out[row] = np.bincount(idx, weights=grad[row].ravel(), minlength=d)
    return out


def softmax_rows(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_backward(y, grad):
    y = np.ascontiguousarray(y, dtype=np.float64)
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    return y * (grad - (grad * y).sum(axis=-1, keepdims=True))


def toeplitz_gather(values, n):
    """(2n-1, H) offset values -> (H, n, n) with out[h, i, j] = values[i - j + n - 1, h]."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    offs = np.arange(n)[:, None] - np.arange(n)[None, :] + (n - 1)
    return np.ascontiguousarray(np.moveaxis(values[offs], -1, 0))


def toeplitz_scatter(grad):
    """Adjoint of :func:`toeplitz_gather`: sum each diagonal of (H, n, n)."""
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    heads, n, _ = grad.shape
    offs = (np.arange(n)[:, None] - np.arange(n)[None, :] + (n - 1)).ravel()
    out = np.empty((2 * n - 1, heads))
    for h in range(heads):
        out[:, h] = np.bincount(offs, weights=grad[h].ravel(), minlength=2 * n - 1)
    return out
