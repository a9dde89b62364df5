# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im for channels-last 2-D convolution."""

import numpy as np
cimport cython

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int k, int stride, int pad, real[:, ::1] out):
    """Gather (B, H, W, C) patches into rows of ``out`` (B*Ho*Wo, k*k*C)."""
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    cdef Py_ssize_t b, oh, ow, ki, kj, c, ih, iw, row, col
    with nogil:
        row = 0
        for b in range(B):
            for oh in range(Ho):
                for ow in range(Wo):
                    col = 0
                    for ki in range(k):
                        ih = oh * stride - pad + ki
                        for kj in range(k):
                            iw = ow * stride - pad + kj
                            if 0 <= ih < H and 0 <= iw < W:
                                for c in range(C):
                                    out[row, col + c] = x[b, ih, iw, c]
                            else:
                                for c in range(C):
                                    out[row, col + c] = 0
                            col += C
                    row += 1


def col2im(real[:, ::1] cols, int k, int stride, int pad, real[:, :, :, ::1] out):
    """Scatter-add patch gradients back onto ``out`` (B, H, W, C); ``out`` is zeroed first."""
    cdef Py_ssize_t B = out.shape[0], H = out.shape[1], W = out.shape[2], C = out.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    cdef Py_ssize_t b, oh, ow, ki, kj, c, ih, iw, row, col
    with nogil:
        out[...] = 0
        row = 0
        for b in range(B):
            for oh in range(Ho):
                for ow in range(Wo):
                    col = 0
                    for ki in range(k):
                        ih = oh * stride - pad + ki
                        for kj in range(k):
                            iw = ow * stride - pad + kj
                            if 0 <= ih < H and 0 <= iw < W:
                                for c in range(C):
                                    out[b, ih, iw, c] += cols[row, col + c]
                            col += C
                    row += 1
