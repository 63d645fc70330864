"""Hot-kernel dispatch.

The compiled extension is preferred; set ``MTST_KERNELS=python`` to force the
numpy fallback. ``BACKEND`` reports which one was selected at import.
"""
import os

import numpy as np

from . import _pykernels

_impl = _pykernels
BACKEND = "python"

if os.environ.get("MTST_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def available_backends():
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out


def _c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def unfold(x, patch, stride, n_patches, impl=None):
    impl = impl or _impl
    return impl.unfold(_c64(x), patch, stride, n_patches)


def fold(grad, d, stride, impl=None):
    impl = impl or _impl
    return impl.fold(_c64(grad), d, stride)


def softmax_rows(x, impl=None):
    impl = impl or _impl
    x = _c64(x)
    shape = x.shape
    return impl.softmax_rows(x.reshape(-1, shape[-1])).reshape(shape)


def softmax_rows_backward(y, grad, impl=None):
    impl = impl or _impl
    y, grad = _c64(y), _c64(grad)
    shape = y.shape
    n = shape[-1]
    return impl.softmax_rows_backward(y.reshape(-1, n), grad.reshape(-1, n)).reshape(shape)


def toeplitz_gather(values, n, impl=None):
    impl = impl or _impl
    return impl.toeplitz_gather(_c64(values), n)


def toeplitz_scatter(grad, impl=None):
    impl = impl or _impl
    return impl.toeplitz_scatter(_c64(grad))
