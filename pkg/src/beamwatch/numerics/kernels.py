"""Low-level convolution kernels.

Two interchangeable backends compute the same cross-correlation:

* a numba-jitted direct implementation (used when numba imports cleanly;
  the 5x5 stride-1 case, which dominates training, is fully tap-unrolled),
* a plain-numpy im2col implementation, kept both as a fallback and as an
  independent cross-check for the jitted path in the test suite.

All kernels take pre-padded inputs [B, C, Hp, Wp] and kernels
[Co, Ci, kh, kw] and compute y[b,o,i,j] = sum_{c,ki,kj} x[b,c,i*s+ki,j*s+kj]
* K[o,c,ki,kj].
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap

    prange = range


# -- numpy reference backend ----------------------------------------------


def im2col(xp, kh, kw, stride):
    """Padded input [B,C,Hp,Wp] -> columns [B*Ho*Wo, C*kh*kw]."""
    B, C, Hp, Wp = xp.shape
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [B, C, Ho, Wo, kh, kw]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    return np.ascontiguousarray(cols), Ho, Wo


def conv_forward_np(xp, K, stride):
    B = xp.shape[0]
    Co, Ci, kh, kw = K.shape
    cols, Ho, Wo = im2col(xp, kh, kw, stride)
    y = cols @ K.reshape(Co, -1).T
    return y.reshape(B, Ho, Wo, Co).transpose(0, 3, 1, 2).copy()


def conv_backward_np(dy, xp, K, stride):
    """Returns (dK, dxp) for the numpy backend."""
    B, Co, Ho, Wo = dy.shape
    _, Ci, kh, kw = K.shape
    cols, _, _ = im2col(xp, kh, kw, stride)
    dyf = dy.transpose(0, 2, 3, 1).reshape(-1, Co)
    dK = (dyf.T @ cols).reshape(K.shape)
    dcols = dyf @ K.reshape(Co, -1)
    dxp = np.zeros_like(xp)
    dcols = dcols.reshape(B, Ho, Wo, Ci, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for ki in range(kh):
        for kj in range(kw):
            dxp[:, :, ki:ki + Ho * stride:stride, kj:kj + Wo * stride:stride] += \
                dcols[:, :, ki, kj]
    return dK, dxp


# -- numba backend ---------------------------------------------------------


@njit(parallel=True, fastmath=True, cache=True)
def _conv_fwd_5x5_nb(xp, K, y):
    B, C, Hp, Wp = xp.shape
    Co = K.shape[0]
    Ho = y.shape[2]
    Wo = y.shape[3]
    for b in prange(B):
        for o in range(Co):
            for i in range(Ho):
                acc = np.zeros(Wo, dtype=xp.dtype)
                for c in range(C):
                    x0 = xp[b, c, i]
                    x1 = xp[b, c, i + 1]
                    x2 = xp[b, c, i + 2]
                    x3 = xp[b, c, i + 3]
                    x4 = xp[b, c, i + 4]
                    k = K[o, c]
                    for j in range(Wo):
                        s = (k[0, 0] * x0[j] + k[0, 1] * x0[j + 1]
                             + k[0, 2] * x0[j + 2] + k[0, 3] * x0[j + 3]
                             + k[0, 4] * x0[j + 4])
                        s += (k[1, 0] * x1[j] + k[1, 1] * x1[j + 1]
                              + k[1, 2] * x1[j + 2] + k[1, 3] * x1[j + 3]
                              + k[1, 4] * x1[j + 4])
                        s += (k[2, 0] * x2[j] + k[2, 1] * x2[j + 1]
                              + k[2, 2] * x2[j + 2] + k[2, 3] * x2[j + 3]
                              + k[2, 4] * x2[j + 4])
                        s += (k[3, 0] * x3[j] + k[3, 1] * x3[j + 1]
                              + k[3, 2] * x3[j + 2] + k[3, 3] * x3[j + 3]
                              + k[3, 4] * x3[j + 4])
                        s += (k[4, 0] * x4[j] + k[4, 1] * x4[j + 1]
                              + k[4, 2] * x4[j + 2] + k[4, 3] * x4[j + 3]
                              + k[4, 4] * x4[j + 4])
                        acc[j] += s
                y[b, o, i] = acc


@njit(parallel=True, fastmath=True, cache=True)
def _conv_fwd_generic_nb(xp, K, y, stride):
    B, C, Hp, Wp = xp.shape
    Co = K.shape[0]
    kh = K.shape[2]
    kw = K.shape[3]
    Ho = y.shape[2]
    Wo = y.shape[3]
    for b in prange(B):
        for o in range(Co):
            for i in range(Ho):
                acc = np.zeros(Wo, dtype=xp.dtype)
                for c in range(C):
                    for ki in range(kh):
                        xrow = xp[b, c, i * stride + ki]
                        for kj in range(kw):
                            w = K[o, c, ki, kj]
                            for j in range(Wo):
                                acc[j] += w * xrow[j * stride + kj]
                y[b, o, i] = acc


@njit(parallel=True, fastmath=True, cache=True)
def _conv_bwd_k_nb(dy, xp, dK, stride):
    B, Co, Ho, Wo = dy.shape
    C = dK.shape[1]
    kh = dK.shape[2]
    kw = dK.shape[3]
    for oc in prange(Co * C):
        o = oc // C
        c = oc % C
        for ki in range(kh):
            for kj in range(kw):
                s = dy.dtype.type(0.0)
                for b in range(B):
                    for i in range(Ho):
                        drow = dy[b, o, i]
                        xrow = xp[b, c, i * stride + ki]
                        for j in range(Wo):
                            s += drow[j] * xrow[j * stride + kj]
                dK[o, c, ki, kj] = s


@njit(parallel=True, fastmath=True, cache=True)
def _conv_bwd_x_nb(dy, K, dxp, stride):
    B, Co, Ho, Wo = dy.shape
    C = K.shape[1]
    kh = K.shape[2]
    kw = K.shape[3]
    for b in prange(B):
        for o in range(Co):
            for c in range(C):
                for ki in range(kh):
                    for kj in range(kw):
                        w = K[o, c, ki, kj]
                        for i in range(Ho):
                            drow = dy[b, o, i]
                            xrow = dxp[b, c, i * stride + ki]
                            for j in range(Wo):
                                xrow[j * stride + kj] += w * drow[j]


def conv_forward_nb(xp, K, stride):
    B = xp.shape[0]
    Co, Ci, kh, kw = K.shape
    Ho = (xp.shape[2] - kh) // stride + 1
    Wo = (xp.shape[3] - kw) // stride + 1
    y = np.empty((B, Co, Ho, Wo), dtype=xp.dtype)
    if kh == 5 and kw == 5 and stride == 1:
        _conv_fwd_5x5_nb(xp, K, y)
    else:
        _conv_fwd_generic_nb(xp, K, y, stride)
    return y


def conv_backward_nb(dy, xp, K, stride):
    dK = np.empty_like(K)
    _conv_bwd_k_nb(np.ascontiguousarray(dy), xp, dK, stride)
    dxp = np.zeros_like(xp)
    if K.shape[2] == 5 and K.shape[3] == 5 and stride == 1:
        # dx is the full correlation of dy with the flipped, transposed kernel
        pad = K.shape[2] - 1
        dyp = np.zeros(
            (dy.shape[0], dy.shape[1], dy.shape[2] + 2 * pad, dy.shape[3] + 2 * pad),
            dtype=dy.dtype,
        )
        dyp[:, :, pad:pad + dy.shape[2], pad:pad + dy.shape[3]] = dy
        Kt = np.ascontiguousarray(K[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        _conv_fwd_5x5_nb(dyp, Kt, dxp)
    else:
        _conv_bwd_x_nb(np.ascontiguousarray(dy), K, dxp, stride)
    return dK, dxp


if HAVE_NUMBA:
    conv_forward = conv_forward_nb
    conv_backward = conv_backward_nb
else:  # pragma: no cover
    conv_forward = conv_forward_np
    conv_backward = conv_backward_np
