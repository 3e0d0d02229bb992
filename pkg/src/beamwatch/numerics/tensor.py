"""Dense n-d tensor with reverse-mode automatic differentiation.

A Tensor wraps a numpy array plus an optional gradient tape node. Ops build
a DAG of parents and backward closures; Tensor.backward() walks the DAG in
reverse topological order and accumulates gradients into every tensor that
requires them. float32 is the training dtype; gradient checks run the same
graph in float64.

Setting the environment variable NUMERICS_CHECK_FINITE=1 makes every op
assert that its output is finite and raise NumericsError otherwise.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np

from ..errors import NumericsError, ShapeError

DEFAULT_DTYPE = np.float32

_CHECK_FINITE = os.environ.get("NUMERICS_CHECK_FINITE", "") == "1"
_GRAD_ENABLED = True


def set_check_finite(enabled):
    """Toggle NaN/Inf assertions at runtime (mirrors NUMERICS_CHECK_FINITE)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


def check_finite_enabled():
    return _CHECK_FINITE


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled():
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward_fn = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # -- graph plumbing ------------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Reverse-mode sweep seeding d(self)/d(self) = 1 (or `grad`)."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(
                    f"backward() without an explicit gradient needs a scalar "
                    f"output, got shape {self.data.shape}"
                )
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _finite_guard(arr, op_name):
    if _CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values produced by op '{op_name}'")


def make_node(data, parents, backward_fn, op_name):
    """Wrap an op result; attaches the tape only when grads are live."""
    _finite_guard(data, op_name)
    need = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=need)
    if need:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise arithmetic ---------------------------------------------
# Python scalars stay scalars so float32 graphs are not upcast to float64.


def _is_number(x):
    return isinstance(x, (int, float)) or (np.isscalar(x) and not isinstance(x, str))


def add(a, b):
    if _is_number(b):
        a = as_tensor(a)
        c = float(b)

        def backward_s(g):
            if a.requires_grad:
                a._accumulate(g)

        return make_node(a.data + c, (a,), backward_s, "add")
    if _is_number(a):
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(g, b.data.shape))

    return make_node(out_data, (a, b), backward, "add")


def sub(a, b):
    if _is_number(b):
        return add(a, -float(b))
    if _is_number(a):
        return add(neg(b), float(a))
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(-unbroadcast(g, b.data.shape))

    return make_node(out_data, (a, b), backward, "sub")


def mul(a, b):
    if _is_number(b):
        a = as_tensor(a)
        c = float(b)

        def backward_s(g):
            if a.requires_grad:
                a._accumulate(g * c)

        return make_node(a.data * c, (a,), backward_s, "mul")
    if _is_number(a):
        return mul(b, a)
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(g * a.data, b.data.shape))

    return make_node(out_data, (a, b), backward, "mul")


def neg(a):
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(-g)

    return make_node(-a.data, (a,), backward, "neg")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul expects 2-d operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul inner dims disagree: {a.data.shape} vs {b.data.shape}"
        )
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return make_node(out_data, (a, b), backward, "matmul")


def transpose(a):
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return make_node(a.data.T, (a,), backward, "transpose")


def reshape(a, shape):
    a = as_tensor(a)
    old_shape = a.data.shape

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(old_shape))

    return make_node(a.data.reshape(shape), (a,), backward, "reshape")


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return make_node(out_data, (a,), backward, "sum")


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.data.shape[ax]
    out = tsum(a, axis=axis, keepdims=keepdims)
    return mul(out, 1.0 / n)


# -- nonlinearities -------------------------------------------------------


def relu(a):
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))

    return make_node(out_data, (a,), backward, "relu")


def sigmoid(a):
    a = as_tensor(a)
    # stable piecewise form, never exponentiates a large positive value
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out_data = out_data.astype(x.dtype, copy=False)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data * (1.0 - out_data))

    return make_node(out_data, (a,), backward, "sigmoid")


def tanh(a):
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - out_data * out_data))

    return make_node(out_data, (a,), backward, "tanh")


# -- shape / indexing ------------------------------------------------------


def select_step(a, index, axis=1):
    """Slice one index along `axis` (used to pull step t out of a sequence)."""
    a = as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = index
    idx = tuple(idx)
    out_data = a.data[idx]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            a._accumulate(full)

    return make_node(out_data, (a,), backward, "select_step")


def vstack_rows(tensors):
    """Concatenate 2-d tensors along axis 0; backward splits the gradient."""
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[0] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=0)
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._accumulate(g[lo:hi])

    return make_node(out_data, tuple(tensors), backward, "vstack_rows")


def slice_rows(a, start, stop):
    """Row slice [start:stop] of a 2-d tensor."""
    a = as_tensor(a)
    out_data = a.data[start:stop]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[start:stop] = g
            a._accumulate(full)

    return make_node(out_data, (a,), backward, "slice_rows")
