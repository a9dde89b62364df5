"""Pure-numpy im2col / col2im, signature-compatible with the compiled kernels."""

import numpy as np


def _out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def im2col(x, k, stride, pad, out):
    b, h, w, c = x.shape
    ho, wo = _out_size(h, k, stride, pad), _out_size(w, k, stride, pad)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    view = out.reshape(b, ho, wo, k, k, c)
    for ki in range(k):
        for kj in range(k):
            view[:, :, :, ki, kj, :] = xp[:, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride, :]


def col2im(cols, k, stride, pad, out):
    b, h, w, c = out.shape
    ho, wo = _out_size(h, k, stride, pad), _out_size(w, k, stride, pad)
    padded = np.zeros((b, h + 2 * pad, w + 2 * pad, c), dtype=out.dtype)
    view = cols.reshape(b, ho, wo, k, k, c)
    for ki in range(k):
        for kj in range(k):
            padded[:, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride, :] += view[:, :, :, ki, kj, :]
    out[...] = padded[:, pad:pad + h, pad:pad + w, :]
