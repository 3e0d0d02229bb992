"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError


class AdamState:
    """First/second moment accumulators for a fixed list of parameters."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]


def adam_step(params, state):
    """One bias-corrected Adam update; clears gradients afterwards.

    m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
    """
    if list(params) != state.params:
        raise ValidationError("adam_step: params do not match the AdamState")
    for i, p in enumerate(params):
        if p.grad is None:
            name = p.name or f"param[{i}]"
            raise ValidationError(f"adam_step: missing gradient for {name}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for i, p in enumerate(params):
        g = p.grad
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)
        p.grad = None
