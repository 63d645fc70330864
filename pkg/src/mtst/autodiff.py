"""Minimal dense tensors with tape-based reverse-mode differentiation.

Operations executed inside an active :class:`Tape` whose inputs require
gradients are recorded in execution order; :func:`backward_sweep` replays the
tape in reverse and accumulates gradients in tape order, so a sweep over the
same tape is bitwise reproducible. Everything is float64.

Only the operations the forecasting model needs are provided. Broadcasting
follows numpy rules and is undone in the backward pass by summation.
"""
from __future__ import annotations

import itertools
import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

from . import kernels
from .errors import ConfigError, ShapeError, UsageError

_ids = itertools.count()
_TAPES = []
_FLOPS = []

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "name", "_recorded")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.node_id = next(_ids)
        self.name = name
        self._recorded = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return swap_last(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("op", "inputs", "out", "backward")

    def __init__(self, op, inputs, out, backward):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations (define-by-run)."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, root):
        backward_sweep(self, root)


def _record(op, inputs, out_data, backward):
    out = Tensor(out_data)
    if _TAPES and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._recorded = True
        _TAPES[-1].nodes.append(_Node(op, inputs, out, backward))
    return out


@contextmanager
def no_grad():
    saved = list(_TAPES)
    _TAPES.clear()
    try:
        yield
    finally:
        _TAPES.extend(saved)


class FlopCounter:
    def __init__(self):
        self.total = 0
        self.by_op = {}

    def add(self, op, n):
        self.total += n
        self.by_op[op] = self.by_op.get(op, 0) + n


@contextmanager
def count_flops():
    """Count floating-point operations of every tensor op executed inside."""
    counter = FlopCounter()
    _FLOPS.append(counter)
    try:
        yield counter
    finally:
        _FLOPS.pop()


def _flops(op, n):
    if _FLOPS:
        _FLOPS[-1].add(op, int(n))


def backward_sweep(tape, root):
    """Populate ``.grad`` on every leaf that requires gradients.

    Gradients accumulate into existing ``.grad`` buffers, so call
    ``zero_grad`` between independent sweeps.
    """
    if root.data.size != 1:
        raise UsageError(f"backward root must be a scalar, got shape {root.shape}")
    if not root.requires_grad:
        raise UsageError("backward root does not depend on any tensor requiring grad")
    grads = {root.node_id: np.ones_like(root.data)}
    if not root._recorded:
        root.grad = grads[root.node_id] if root.grad is None else root.grad + 1.0
        return
    for node in reversed(tape.nodes):
        g = grads.pop(node.out.node_id, None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            if inp._recorded:
                prev = grads.get(inp.node_id)
                grads[inp.node_id] = ig if prev is None else prev + ig
            else:
                inp.grad = np.array(ig, dtype=np.float64) if inp.grad is None else inp.grad + ig


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    out = a.data + b.data
    _flops("add", out.size)
    sa, sb = a.shape, b.shape
    return _record("add", (a, b), out, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    out = a.data - b.data
    _flops("sub", out.size)
    sa, sb = a.shape, b.shape
    return _record("sub", (a, b), out, lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data
    out = ad * bd
    _flops("mul", out.size)
    return _record(
        "mul", (a, b), out,
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def square(a):
    ad = a.data
    _flops("square", ad.size)
    return _record("square", (a,), ad * ad, lambda g: (2.0 * ad * g,))


def reciprocal(a):
    inv = 1.0 / a.data
    _flops("reciprocal", inv.size)
    return _record("reciprocal", (a,), inv, lambda g: (-g * inv * inv,))


def abs_(a):
    ad = a.data
    return _record("abs", (a,), np.abs(ad), lambda g: (np.sign(ad) * g,))


def sum_(a, axis=None, keepdims=False):
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)
    _flops("sum", a.size)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", (a,), out, backward)


def mean(a, axis=None, keepdims=False):
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def gelu(a):
    """Exact (erf) Gaussian error linear unit."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    _flops("gelu", 8 * x.size)
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return _record("gelu", (a,), x * cdf, lambda g: (g * (cdf + x * pdf),))


def dropout(a, rate, rng=None, training=True):
    """Inverted dropout; identity when ``rate == 0`` or not training."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise UsageError("dropout in training mode needs an rng")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    _flops("dropout", a.size)
    return _record("dropout", (a,), a.data * keep, lambda g: (g * keep,))


# linear algebra and layout

def matmul(a, b):
    """Matrix product over the last two axes, batching leading axes numpy-style."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd
    _flops("matmul", 2 * out.size * ad.shape[-1])

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _record("matmul", (a, b), out, backward)


def swap_last(a):
    return _record("swap", (a,), np.swapaxes(a.data, -1, -2), lambda g: (np.swapaxes(g, -1, -2),))


def transpose(a, axes):
    inv = np.argsort(axes)
    return _record("transpose", (a,), np.transpose(a.data, axes), lambda g: (np.transpose(g, inv),))


def reshape(a, shape):
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from None
    return _record("reshape", (a,), out, lambda g: (g.reshape(old),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _record("concat", tuple(tensors), out, lambda g: tuple(np.split(g, cuts, axis=axis)))


# composite ops with hand-written adjoints

def softmax_rows(a):
    """Softmax along the last axis with row-max subtraction."""
    y = kernels.softmax_rows(a.data)
    _flops("softmax", 4 * y.size)
    return _record("softmax", (a,), y, lambda g: (kernels.softmax_rows_backward(y, g),))


def unfold(y, patch, stride, n_patches):
    """(B, d) -> (B, J, P) windows; tail indices replicate the final element."""
    d = y.shape[-1]
    out = kernels.unfold(y.data, patch, stride, n_patches)
    return _record("unfold", (y,), out, lambda g: (kernels.fold(g, d, stride),))


def toeplitz(values, n):
    """(2n-1, H) -> (H, n, n) with out[h, i, j] = values[i - j + n - 1, h]."""
    if values.shape[0] != 2 * n - 1:
        raise ShapeError(f"toeplitz: need {2 * n - 1} offset rows, got {values.shape[0]}")
    out = kernels.toeplitz_gather(values.data, n)
    return _record("toeplitz", (values,), out, lambda g: (kernels.toeplitz_scatter(g),))


class BatchNormState:
    """Running statistics for one batch-norm site; not trainable."""

    def __init__(self, features):
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)


def batch_norm(x, gamma, beta, state, training, eps=BN_EPS, momentum=BN_MOMENTUM):
    """Per-feature normalization over every axis but the last."""
    f = x.shape[-1]
    if gamma.shape != (f,) or beta.shape != (f,):
        raise ShapeError(
            f"batch_norm: {f} features but gamma {gamma.shape} and beta {beta.shape}"
        )
    axes = tuple(range(x.ndim - 1))
    xd, gd = x.data, gamma.data
    _flops("batch_norm", 6 * xd.size)
    if training:
        n = xd.size // f
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (xd - mu) * inv
        state.running_mean = (1.0 - momentum) * state.running_mean + momentum * mu
        unbiased = var * n / (n - 1) if n > 1 else var
        state.running_var = (1.0 - momentum) * state.running_var + momentum * unbiased

        def backward(g):
            dxhat = g * gd
            dx = inv / n * (
                n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes)
            )
            return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        inv = 1.0 / np.sqrt(state.running_var + eps)
        xhat = (xd - state.running_mean) * inv

        def backward(g):
            return g * gd * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    out = xhat * gd + beta.data
    return _record("batch_norm", (x, gamma, beta), out, backward)


def mse_loss(pred, target):
    return mean(square(sub(pred, target)))


def gradients(f, params):
    """Run ``f`` on a fresh tape and return {name: gradient array}."""
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    backward_sweep(tape, loss)
    return {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}


def finite_diff_check(f, params, h=1e-6, return_details=False):
    """Max relative error between tape gradients and central differences.

    ``f`` builds a scalar Tensor from the current values of ``params`` (a
    mapping of name -> Tensor). Each parameter entry is perturbed in place
    by +-h and restored. Any non-finite perturbed value fails the check
    (returns ``inf``).
    """
    if not 1e-7 <= h <= 1e-4:
        raise UsageError(f"step h must lie in [1e-7, 1e-4], got {h}")
    analytic = gradients(f, params)
    worst, worst_at = 0.0, None
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            ga = analytic[name].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = f().item()
                flat[i] = orig - h
                fm = f().item()
                flat[i] = orig
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    return (math.inf, (name, i)) if return_details else math.inf
                num = (fp - fm) / (2.0 * h)
                err = abs(ga[i] - num) / (abs(ga[i]) + abs(num) + 1e-12)
                if err > worst:
                    worst, worst_at = err, (name, i)
    return (worst, worst_at) if return_details else worst
