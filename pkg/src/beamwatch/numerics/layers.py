"""Neural network layers on top of the Tensor tape.

Everything the predictor architecture needs: dense, 2-d convolution,
batch normalization, max pooling, dropout, a GRU cell, softmax and the
softmax cross-entropy loss. Convolution, pooling, batch norm and the loss
are primitives with hand-written backward passes; the GRU cell is a
composite of tape primitives so backpropagation through time falls out of
the graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, ShapeError, ValidationError
from . import kernels
from .tensor import (Tensor, as_tensor, make_node, matmul, mul, add, sub,
                     relu, sigmoid, tanh, transpose)


def dense_forward(x, W, b):
    """y = x @ W.T + b for x [batch, in], W [out, in], b [out]."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if x.data.ndim != 2 or W.data.ndim != 2:
        raise ShapeError(
            f"dense_forward expects 2-d x and W, got {x.data.shape} and {W.data.shape}"
        )
    if x.data.shape[1] != W.data.shape[1]:
        raise ShapeError(
            f"dense_forward: x {x.data.shape} does not match W {W.data.shape} "
            f"(inner dims {x.data.shape[1]} vs {W.data.shape[1]})"
        )
    if b.data.shape != (W.data.shape[0],):
        raise ShapeError(
            f"dense_forward: b {b.data.shape} does not match W {W.data.shape}"
        )
    return add(matmul(x, transpose(W)), b)


def conv2d_forward(x, kernels_t, stride=1, padding=0):
    """Cross-correlation of x [B, Ci, H, W] with kernels [Co, Ci, kh, kw].

    No bias term: batch norm directly follows every convolution in this
    architecture and absorbs it.
    """
    x, kernels_t = as_tensor(x), as_tensor(kernels_t)
    if x.data.ndim != 4 or kernels_t.data.ndim != 4:
        raise ShapeError(
            f"conv2d expects 4-d input and kernels, got {x.data.shape} and "
            f"{kernels_t.data.shape}"
        )
    B, Ci, H, W = x.data.shape
    Co, Ck, kh, kw = kernels_t.data.shape
    if Ci != Ck:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.data.shape} vs kernels "
            f"{kernels_t.data.shape}"
        )
    if stride < 1:
        raise ConfigurationError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ConfigurationError(f"conv2d padding must be >= 0, got {padding}")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise ConfigurationError(
            f"conv2d kernel {kh}x{kw} larger than padded input {Hp}x{Wp}"
        )
    if (Hp - kh) % stride or (Wp - kw) % stride:
        raise ConfigurationError(
            f"conv2d output size not integral: input {H}x{W}, pad {padding}, "
            f"kernel {kh}x{kw}, stride {stride}"
        )

    if padding:
        xp = np.zeros((B, Ci, Hp, Wp), dtype=x.data.dtype)
        xp[:, :, padding:padding + H, padding:padding + W] = x.data
    else:
        xp = np.ascontiguousarray(x.data)
    y = kernels.conv_forward(xp, kernels_t.data, stride)

    def backward(g):
        dK, dxp = kernels.conv_backward(g, xp, kernels_t.data, stride)
        if kernels_t.requires_grad:
            kernels_t._accumulate(dK)
        if x.requires_grad:
            if padding:
                x._accumulate(dxp[:, :, padding:padding + H, padding:padding + W])
            else:
                x._accumulate(dxp)

    return make_node(y, (x, kernels_t), backward, "conv2d")


def maxpool2d(x, k=2, stride=1):
    """Per-window max over k x k windows; ties route gradient to the first
    (row-major) maximal element of each window."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d expects 4-d input, got {x.data.shape}")
    B, C, H, W = x.data.shape
    if k > H or k > W:
        raise ConfigurationError(
            f"maxpool2d window {k}x{k} larger than input {H}x{W}"
        )
    Ho = (H - k) // stride + 1
    Wo = (W - k) // stride + 1
    views = []
    out = None
    for di in range(k):
        for dj in range(k):
            v = x.data[:, :, di:di + Ho * stride:stride, dj:dj + Wo * stride:stride]
            views.append(v)
            out = v.copy() if out is None else np.maximum(out, v)

    def backward(g):
        if not x.requires_grad:
            return
        dx = np.zeros_like(x.data)
        taken = np.zeros(out.shape, dtype=bool)
        idx = 0
        for di in range(k):
            for dj in range(k):
                sel = (views[idx] == out) & ~taken
                taken |= sel
                dx[:, :, di:di + Ho * stride:stride, dj:dj + Wo * stride:stride] += \
                    np.where(sel, g, 0)
                idx += 1
        x._accumulate(dx)

    return make_node(out, (x,), backward, "maxpool2d")


@dataclass
class BatchNormState:
    """Running statistics for one batchnorm2d layer."""

    momentum: float = 0.1
    eps: float = 1e-5
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None
    initialized: bool = False


def batchnorm2d(x, gamma, beta, mode, state):
    """Per-channel batch normalization over [B, C, H, W].

    Train mode normalizes with batch statistics and folds them into the
    running stats; eval mode normalizes with the running stats.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.data.ndim != 4:
        raise ShapeError(f"batchnorm2d expects 4-d input, got {x.data.shape}")
    B, C, H, W = x.data.shape
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise ShapeError(
            f"batchnorm2d gamma/beta must have shape ({C},), got "
            f"{gamma.data.shape} and {beta.data.shape}"
        )
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"batchnorm2d mode must be train|eval, got {mode!r}")

    eps = state.eps
    if mode == "train":
        if B * H * W < 2:
            raise ConfigurationError(
                "batchnorm2d train mode needs at least 2 values per channel"
            )
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if not state.initialized:
            state.running_mean = mean.copy()
            state.running_var = var.copy()
            state.initialized = True
        else:
            m = state.momentum
            state.running_mean = ((1 - m) * state.running_mean + m * mean).astype(mean.dtype)
            state.running_var = ((1 - m) * state.running_var + m * var).astype(var.dtype)
    else:
        if not state.initialized:
            raise ValidationError(
                "batchnorm2d eval mode before any train step: running "
                "statistics are uninitialized"
            )
        mean = state.running_mean.astype(x.data.dtype)
        var = state.running_var.astype(x.data.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    xm = x.data - mean[None, :, None, None]
    xhat = xm * inv_std[None, :, None, None]
    y = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]
    n = B * H * W

    def backward(g):
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=(0, 2, 3)))
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=(0, 2, 3)))
        if not x.requires_grad:
            return
        gxhat = g * gamma.data[None, :, None, None]
        if mode == "eval":
            x._accumulate(gxhat * inv_std[None, :, None, None])
            return
        # train mode: batch statistics depend on x
        sum_g = gxhat.sum(axis=(0, 2, 3))
        sum_gx = (gxhat * xhat).sum(axis=(0, 2, 3))
        dx = (gxhat - (sum_g[None, :, None, None]
                       + xhat * sum_gx[None, :, None, None]) / n) \
            * inv_std[None, :, None, None]
        x._accumulate(dx)

    return make_node(y, (x, gamma, beta), backward, "batchnorm2d")


def dropout(x, p_drop, mode, rng=None):
    """Inverted dropout: train mode zeroes with prob p_drop and rescales
    survivors by 1/(1-p_drop); eval mode is the identity."""
    x = as_tensor(x)
    if not 0.0 <= p_drop < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {p_drop}")
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"dropout mode must be train|eval, got {mode!r}")
    if mode == "eval" or p_drop == 0.0:
        return x
    if rng is None:
        raise ValidationError("dropout in train mode needs an rng")
    keep = 1.0 - p_drop
    mask = (rng.random(x.data.shape) < keep).astype(x.data.dtype) / keep

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    return make_node(x.data * mask, (x,), backward, "dropout")


@dataclass
class GruCellParams:
    """Weights of one GRU cell (update z, reset r, candidate n gates)."""

    W_z: Tensor
    W_r: Tensor
    W_n: Tensor
    U_z: Tensor
    U_r: Tensor
    U_n: Tensor
    b_z: Tensor
    b_r: Tensor
    b_n: Tensor

    @classmethod
    def init(cls, input_dim, hidden_dim, rng, dtype=np.float32, prefix="gru"):
        """Uniform +-1/sqrt(hidden) weights, zero biases."""
        bound = 1.0 / np.sqrt(hidden_dim)

        def w(shape, name):
            return Tensor(rng.uniform(-bound, bound, shape).astype(dtype),
                          requires_grad=True, name=f"{prefix}.{name}")

        def zeros(name):
            return Tensor(np.zeros(hidden_dim, dtype=dtype),
                          requires_grad=True, name=f"{prefix}.{name}")

        return cls(
            W_z=w((hidden_dim, input_dim), "W_z"),
            W_r=w((hidden_dim, input_dim), "W_r"),
            W_n=w((hidden_dim, input_dim), "W_n"),
            U_z=w((hidden_dim, hidden_dim), "U_z"),
            U_r=w((hidden_dim, hidden_dim), "U_r"),
            U_n=w((hidden_dim, hidden_dim), "U_n"),
            b_z=zeros("b_z"),
            b_r=zeros("b_r"),
            b_n=zeros("b_n"),
        )

    @property
    def hidden_dim(self):
        return self.W_z.data.shape[0]

    @property
    def input_dim(self):
        return self.W_z.data.shape[1]

    def tensors(self):
        return [self.W_z, self.W_r, self.W_n, self.U_z, self.U_r, self.U_n,
                self.b_z, self.b_r, self.b_n]


def _check_gate(x, h_prev, W, U, gate):
    if x.data.shape[1] != W.data.shape[1]:
        raise ShapeError(
            f"gru_cell {gate} gate: input dim {x.data.shape[1]} does not match "
            f"W {W.data.shape}"
        )
    if h_prev.data.shape[1] != U.data.shape[1]:
        raise ShapeError(
            f"gru_cell {gate} gate: hidden dim {h_prev.data.shape[1]} does not "
            f"match U {U.data.shape}"
        )


def gru_cell(x, h_prev, p):
    """One GRU step.

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    n = tanh(W_n x + r * (U_n h) + b_n)
    h' = (1 - z) * n + z * h
    """
    x, h_prev = as_tensor(x), as_tensor(h_prev)
    _check_gate(x, h_prev, p.W_z, p.U_z, "update")
    _check_gate(x, h_prev, p.W_r, p.U_r, "reset")
    _check_gate(x, h_prev, p.W_n, p.U_n, "candidate")
    z = sigmoid(add(add(matmul(x, transpose(p.W_z)), matmul(h_prev, transpose(p.U_z))), p.b_z))
    r = sigmoid(add(add(matmul(x, transpose(p.W_r)), matmul(h_prev, transpose(p.U_r))), p.b_r))
    n = tanh(add(add(matmul(x, transpose(p.W_n)), mul(r, matmul(h_prev, transpose(p.U_n)))), p.b_n))
    return add(mul(sub(1.0, z), n), mul(z, h_prev))


def gru_cell_precomputed(ax_z, ax_r, ax_n, h_prev, p):
    """GRU step given precomputed input projections a = W x + b.

    Algebraically identical to gru_cell; lets a sequence batch all input-side
    projections into three matmuls.
    """
    z = sigmoid(add(ax_z, matmul(h_prev, transpose(p.U_z))))
    r = sigmoid(add(ax_r, matmul(h_prev, transpose(p.U_r))))
    n = tanh(add(ax_n, mul(r, matmul(h_prev, transpose(p.U_n)))))
    return add(mul(sub(1.0, z), n), mul(z, h_prev))


def softmax(logits):
    """Row-wise softmax with max-subtraction stabilization."""
    logits = as_tensor(logits)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if logits.requires_grad:
            dot = (g * probs).sum(axis=-1, keepdims=True)
            logits._accumulate(probs * (g - dot))

    return make_node(probs, (logits,), backward, "softmax")


def softmax_cross_entropy(logits, labels):
    """Mean over the batch of -log softmax(logits)[label].

    Gradient w.r.t. logits is (softmax - onehot) / batch.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects 2-d logits, got "
                         f"{logits.data.shape}")
    B, C = logits.data.shape
    if labels.shape != (B,):
        raise ShapeError(
            f"softmax_cross_entropy: labels shape {labels.shape} does not match "
            f"batch {B}"
        )
    bad = np.nonzero((labels < 0) | (labels >= C))[0]
    if bad.size:
        raise ValidationError(
            f"softmax_cross_entropy: label {int(labels[bad[0]])} out of range "
            f"[0, {C}) at index {int(bad[0])}"
        )
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    loss = -logp[np.arange(B), labels].mean()
    probs = np.exp(logp)

    def backward(g):
        if logits.requires_grad:
            d = probs.copy()
            d[np.arange(B), labels] -= 1.0
            logits._accumulate((g / B) * d)

    return make_node(np.asarray(loss, dtype=logits.data.dtype),
                     (logits,), backward, "softmax_cross_entropy")
