"""Convolution patch kernels.

The compiled extension is used when it imports; otherwise, or when
``BIRDSSL_PURE_PYTHON=1`` is set, the numpy implementation is used.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("BIRDSSL_PURE_PYTHON") == "1":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def im2col(x: np.ndarray, k: int, stride: int, pad: int, impl=None) -> np.ndarray:
    """(B, H, W, C) -> (B*Ho*Wo, k*k*C) patch matrix."""
    impl = impl or _impl
    x = np.ascontiguousarray(x)
    b, h, w, c = x.shape
    ho, wo = conv_out_size(h, k, stride, pad), conv_out_size(w, k, stride, pad)
    out = np.empty((b * ho * wo, k * k * c), dtype=x.dtype)
    impl.im2col(x, k, stride, pad, out)
    return out


def col2im(cols: np.ndarray, shape, k: int, stride: int, pad: int, impl=None) -> np.ndarray:
    """Adjoint of :func:`im2col`: accumulate patch rows into a (B, H, W, C) array."""
    impl = impl or _impl
    cols = np.ascontiguousarray(cols)
    out = np.empty(shape, dtype=cols.dtype)
    impl.col2im(cols, k, stride, pad, out)
    return out
