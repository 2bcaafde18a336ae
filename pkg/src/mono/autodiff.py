"""Minimal reverse-mode engine on numpy arrays.

Just enough ops to differentiate the networks and operator layers in this
package: broadcasting add/mul, tanh/relu, two-operand einsum contractions
and reductions.  Constants (plain ndarrays / floats) may appear anywhere a
Tensor can; they simply receive no gradient.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def backward(self, seed=None):
        """Accumulate gradients of self (summed against ``seed``) into leaves."""
        order, seen = [], set()

        def topo(t):
            if id(t) in seen or not isinstance(t, Tensor):
                return
            seen.add(id(t))
            for p in t._parents:
                topo(p)
            order.append(t)

        topo(self)
        for t in order:
            t.grad = None
        self.grad = np.ones_like(self.data) if seed is None \
            else np.broadcast_to(np.asarray(seed, dtype=np.float64),
                                 self.data.shape).copy()
        for t in reversed(order):
            if t._backward is None or t.grad is None:
                continue
            for parent, g in zip(t._parents, t._backward(t.grad)):
                if g is None:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum grad down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _wrap(op, out, parents, backward):
    tracked = tuple(p for p in parents if isinstance(p, Tensor))
    if not tracked:
        return Tensor(out)
    return Tensor(out, parents=tracked, backward=backward)


def add(a, b):
    da, db = _data(a), _data(b)
    out = da + db

    def backward(g):
        grads = []
        if isinstance(a, Tensor):
            grads.append(_unbroadcast(g, da.shape))
        if isinstance(b, Tensor):
            grads.append(_unbroadcast(g, db.shape))
        return grads

    return _wrap("add", out, (a, b), backward)


def mul(a, b):
    da, db = _data(a), _data(b)
    out = da * db

    def backward(g):
        grads = []
        if isinstance(a, Tensor):
            grads.append(_unbroadcast(g * db, da.shape))
        if isinstance(b, Tensor):
            grads.append(_unbroadcast(g * da, db.shape))
        return grads

    return _wrap("mul", out, (a, b), backward)


def tanh(a):
    out = np.tanh(_data(a))

    def backward(g):
        return (g * (1.0 - out * out),)

    return _wrap("tanh", out, (a,), backward)


def relu(a):
    da = _data(a)
    out = np.maximum(da, 0.0)

    def backward(g):
        return (np.where(da > 0.0, g, 0.0),)  # subgradient 0 at the kink

    return _wrap("relu", out, (a,), backward)


def square(a):
    da = _data(a)

    def backward(g):
        return (2.0 * da * g,)

    return _wrap("square", da * da, (a,), backward)


def tsum(a, axis=None):
    da = _data(a)
    out = da.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, da.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), da.shape).copy(),)

    return _wrap("sum", out, (a,), backward)


def _einsum_operand_grad(g, out_idx, my_idx, other_idx, other_data, my_shape):
    present = [c for c in my_idx if c in out_idx or c in other_idx]
    reduced = "".join(present)
    partial = np.einsum(f"{out_idx},{other_idx}->{reduced}", g, other_data,
                        optimize=True)
    if len(present) == len(my_idx):
        return partial
    # Indices summed over in this operand alone: the gradient broadcasts.
    for pos, c in enumerate(my_idx):
        if c not in present:
            partial = np.expand_dims(partial, axis=pos)
    return np.broadcast_to(partial, my_shape).copy()


def matmul2(a, b):
    """Strict 2-D matrix product; all gradients are single GEMMs."""
    da, db = _data(a), _data(b)
    out = da @ db

    def backward(g):
        grads = []
        if isinstance(a, Tensor):
            grads.append(g @ db.T)
        if isinstance(b, Tensor):
            grads.append(da.T @ g)
        return grads

    return _wrap("matmul2", out, (a, b), backward)


def transpose2(a):
    da = _data(a)

    def backward(g):
        return (g.T,)

    return _wrap("transpose2", da.T, (a,), backward)


def reshape(a, shape):
    da = _data(a)

    def backward(g):
        return (g.reshape(da.shape),)

    return _wrap("reshape", da.reshape(shape), (a,), backward)


def einsum(spec: str, a, b):
    """Two-operand einsum with no repeated index inside one operand."""
    ins, out_idx = spec.replace(" ", "").split("->")
    ia, ib = ins.split(",")
    da, db = _data(a), _data(b)
    out = np.einsum(spec, da, db, optimize=True)

    def backward(g):
        grads = []
        if isinstance(a, Tensor):
            grads.append(_einsum_operand_grad(g, out_idx, ia, ib, db, da.shape))
        if isinstance(b, Tensor):
            grads.append(_einsum_operand_grad(g, out_idx, ib, ia, da, db.shape))
        return grads

    return _wrap("einsum", out, (a, b), backward)


ACTIVATIONS = {"tanh": tanh, "relu": relu}
