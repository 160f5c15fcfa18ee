"""Minimal reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps a float64 array and records how it was produced.  Calling
``backward()`` on a scalar result walks the recorded graph in reverse
topological order and accumulates ``grad`` on every tensor created with
``requires_grad=True``.  Only the handful of operations used by the camera
model, the recovery network and the classifiers are provided.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __array_priority__ = 100

    def __init__(self, value, requires_grad=False, _parents=(), _op=""):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        # (parent, fn) pairs: fn maps this node's grad to the parent's grad
        self._parents = _parents
        self._op = _op

    # -- bookkeeping -----------------------------------------------------
    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Tensor({self.value!r}, op={self._op!r})"

    def detach(self):
        return Tensor(self.value.copy())

    def item(self):
        return float(self.value)

    def __float__(self):
        return float(self.value)

    def _make(self, value, parents, op):
        needs = any(p.requires_grad for p, _ in parents)
        if not needs:
            return Tensor(value)
        return Tensor(value, requires_grad=True,
                      _parents=tuple((p, f) for p, f in parents if p.requires_grad),
                      _op=op)

    def backward(self, grad=None):
        if grad is None:
            if self.value.size != 1:
                raise ValueError("backward() without a seed needs a scalar")
            grad = np.ones_like(self.value)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, fn in node._parents:
                pg = fn(g)
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        return self._make(
            self.value + other.value,
            [(self, lambda g: _unbroadcast(g, self.shape)),
             (other, lambda g: _unbroadcast(g, other.shape))], "add")

    __radd__ = __add__

    def __neg__(self):
        return self._make(-self.value, [(self, lambda g: -g)], "neg")

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.value, other.value
        return self._make(
            a * b,
            [(self, lambda g: _unbroadcast(g * b, self.shape)),
             (other, lambda g: _unbroadcast(g * a, other.shape))], "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.value, other.value
        return self._make(
            a / b,
            [(self, lambda g: _unbroadcast(g / b, self.shape)),
             (other, lambda g: _unbroadcast(-g * a / (b * b), other.shape))], "div")

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        a = self.value
        return self._make(
            a ** exponent,
            [(self, lambda g: g * exponent * a ** (exponent - 1))], "pow")

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self.value, other.value
        if a.ndim != 2 or b.ndim != 2:
            raise ValueError("matmul is only defined for 2-d tensors")
        return self._make(
            a @ b,
            [(self, lambda g: g @ b.T), (other, lambda g: a.T @ g)], "matmul")

    def __rmatmul__(self, other):
        return as_tensor(other) @ self

    def __getitem__(self, index):
        shape = self.shape
        parts = index if isinstance(index, tuple) else (index,)
        basic = all(isinstance(i, (slice, int, np.integer)) for i in parts)

        def back(g):
            out = np.zeros(shape)
            if basic:
                out[index] = g
            else:
                np.add.at(out, index, g)
            return out

        return self._make(self.value[index], [(self, back)], "getitem")

    # -- shape -----------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        old = self.shape
        return self._make(self.value.reshape(shape),
                          [(self, lambda g: g.reshape(old))], "reshape")

    def transpose(self, *axes):
        axes = axes or tuple(reversed(range(self.ndim)))
        inverse = np.argsort(axes)
        return self._make(self.value.transpose(axes),
                          [(self, lambda g: g.transpose(inverse))], "transpose")

    @property
    def T(self):
        return self.transpose()

    def sum(self, axis=None, keepdims=False):
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape).copy()

        return self._make(self.value.sum(axis=axis, keepdims=keepdims),
                          [(self, back)], "sum")

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else np.prod(
            [self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    # -- elementwise -----------------------------------------------------
    def exp(self):
        out = np.exp(self.value)
        return self._make(out, [(self, lambda g: g * out)], "exp")

    def log(self):
        a = self.value
        return self._make(np.log(a), [(self, lambda g: g / a)], "log")

    def sqrt(self):
        out = np.sqrt(self.value)
        return self._make(out, [(self, lambda g: g * 0.5 / out)], "sqrt")

    def sin(self):
        a = self.value
        return self._make(np.sin(a), [(self, lambda g: g * np.cos(a))], "sin")

    def abs(self):
        # subgradient 0 at the origin
        sign = np.sign(self.value)
        return self._make(np.abs(self.value), [(self, lambda g: g * sign)], "abs")

    def relu(self):
        mask = self.value > 0
        return self._make(np.where(mask, self.value, 0.0),
                          [(self, lambda g: g * mask)], "relu")

    def softplus(self):
        a = self.value
        out = np.logaddexp(0.0, a)
        sig = 0.5 * (1.0 + np.tanh(0.5 * a))
        return self._make(out, [(self, lambda g: g * sig)], "softplus")

    def sigmoid(self):
        out = 0.5 * (1.0 + np.tanh(0.5 * self.value))
        return self._make(out, [(self, lambda g: g * out * (1.0 - out))], "sigmoid")

    def clip(self, lo=None, hi=None):
        a = self.value
        mask = np.ones(a.shape, dtype=bool)
        if lo is not None:
            mask &= a >= lo
        if hi is not None:
            mask &= a <= hi
        return self._make(np.clip(a, lo, hi), [(self, lambda g: g * mask)], "clip")

    def maximum(self, other):
        """Elementwise max; ties send the gradient to ``self``."""
        other = as_tensor(other)
        take = self.value >= other.value
        return self._make(
            np.where(take, self.value, other.value),
            [(self, lambda g: _unbroadcast(g * take, self.shape)),
             (other, lambda g: _unbroadcast(g * ~take, other.shape))], "maximum")

    def max(self):
        idx = np.unravel_index(np.argmax(self.value), self.shape)
        return self[idx]

    def min(self):
        idx = np.unravel_index(np.argmin(self.value), self.shape)
        return self[idx]


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def value_of(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def is_tensor(*xs):
    return any(isinstance(x, Tensor) for x in xs)


def grad_reverse(x):
    """Identity in the forward pass; negates the gradient on the way back."""
    x = as_tensor(x)
    return x._make(x.value.copy(), [(x, lambda g: -g)], "grad_reverse")


def concatenate(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    parents = []
    for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
        sl = [slice(None)] * t.ndim
        sl[axis] = slice(lo, hi)
        parents.append((t, lambda g, sl=tuple(sl): g[sl]))
    value = np.concatenate([t.value for t in tensors], axis=axis)
    return tensors[0]._make(value, parents, "concatenate") if tensors else Tensor(value)


def stack(tensors, axis=0):
    return concatenate([as_tensor(t).reshape(
        as_tensor(t).shape[:axis] + (1,) + as_tensor(t).shape[axis:]) for t in tensors],
        axis=axis)


def where(cond, a, b):
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    return a._make(
        np.where(cond, a.value, b.value),
        [(a, lambda g: _unbroadcast(g * cond, a.shape)),
         (b, lambda g: _unbroadcast(g * ~cond, b.shape))], "where")


def einsum(spec, a, b):
    """Two-operand einsum, enough for blockwise DCTs and batched projections."""
    a, b = as_tensor(a), as_tensor(b)
    inputs, out = spec.replace(" ", "").split("->")
    sa, sb = inputs.split(",")

    def back_a(g):
        return _unbroadcast(np.einsum(f"{out},{sb}->{sa}", g, b.value), a.shape)

    def back_b(g):
        return _unbroadcast(np.einsum(f"{out},{sa}->{sb}", g, a.value), b.shape)

    return a._make(np.einsum(spec, a.value, b.value),
                   [(a, back_a), (b, back_b)], "einsum")


def pad_edge(x, pad_width):
    """``np.pad(mode='edge')`` with the adjoint that folds edges back in."""
    x = as_tensor(x)
    pad_width = [tuple(p) for p in pad_width]
    shape = x.shape

    def back(g):
        out = g
        for axis, (before, after) in enumerate(pad_width):
            if before == 0 and after == 0:
                continue
            n = shape[axis]
            idx = np.concatenate([np.zeros(before, dtype=int), np.arange(n),
                                  np.full(after, n - 1, dtype=int)])
            folded = np.zeros(out.shape[:axis] + (n,) + out.shape[axis + 1:])
            moved = np.moveaxis(out, axis, 0)
            acc = np.moveaxis(folded, axis, 0)
            np.add.at(acc, idx, moved)
            out = folded
        return out

    return x._make(np.pad(x.value, pad_width, mode="edge"), [(x, back)], "pad_edge")
