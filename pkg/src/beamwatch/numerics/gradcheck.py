"""Finite-difference gradient checker.

Verifies analytic gradients of a scalar-valued tensor function against
central differences, coordinate by coordinate, in 64-bit mode.
"""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from .tensor import Tensor


def grad_check(f, inputs, h=1e-5):
    """Max over all coordinates of |analytic - numeric| / max(|a|, |n|, 1e-8).

    `f` must return a scalar Tensor. Inputs with requires_grad=True are
    perturbed; the rest are treated as constants.
    """
    inputs = list(inputs)
    for t in inputs:
        if not isinstance(t, Tensor):
            raise ValidationError("grad_check inputs must be Tensors")

    out = f(*inputs)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ValidationError(
            "grad_check needs a scalar-valued function, got output shape "
            f"{getattr(out, 'shape', None)}"
        )
    for t in inputs:
        t.zero_grad()
    out = f(*inputs)
    out.backward()
    analytic = [None if not t.requires_grad else
                (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for t in inputs]

    worst = 0.0
    for t, a in zip(inputs, analytic):
        if a is None:
            continue
        flat = t.data.reshape(-1)
        a_flat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f(*inputs).data)
            flat[i] = orig - h
            f_minus = float(f(*inputs).data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(a_flat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(a_flat[i] - numeric) / denom)
    for t in inputs:
        t.zero_grad()
    return worst
