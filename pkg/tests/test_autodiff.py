import numpy as np
import pytest

from conftest import central_diff, rel_err
from spectrapipe.autodiff import (Tensor, concatenate, einsum, grad_reverse, pad_edge, stack,
                                  where)

UNARY = {
    "exp": lambda t: t.exp(),
    "log": lambda t: (t * t + 1.0).log(),
    "sqrt": lambda t: (t * t + 1.0).sqrt(),
    "sin": lambda t: t.sin(),
    "softplus": lambda t: t.softplus(),
    "sigmoid": lambda t: t.sigmoid(),
    "pow": lambda t: (t * t + 1.0) ** 1.5,
    "div": lambda t: 1.0 / (t * t + 2.0),
    "tanh-like": lambda t: (t.exp() - (-t).exp()) / (t.exp() + (-t).exp()),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name, rng):
    f = UNARY[name]
    x0 = rng.standard_normal((3, 4))
    w = rng.standard_normal((3, 4))
    t = Tensor(x0, requires_grad=True)
    (f(t) * w).sum().backward()
    num = central_diff(lambda x: float((f(Tensor(x)) * w).sum().value), x0)
    assert rel_err(t.grad, num) < 1e-6


def test_matmul_broadcast_and_reductions(rng):
    a0, b0 = rng.standard_normal((4, 3)), rng.standard_normal((3, 5))
    bias = rng.standard_normal(5)

    def f(a, b):
        y = (a @ b + bias).relu()
        return (y.sum(axis=0) * y.mean(axis=1, keepdims=True).sum()).sum()

    a, b = Tensor(a0, True), Tensor(b0, True)
    f(a, b).backward()
    na = central_diff(lambda x: float(f(Tensor(x), Tensor(b0)).value), a0)
    nb = central_diff(lambda x: float(f(Tensor(a0), Tensor(x)).value), b0)
    assert rel_err(a.grad, na) < 1e-6 and rel_err(b.grad, nb) < 1e-6


def test_indexing_reshape_transpose(rng):
    x0 = rng.standard_normal((2, 3, 4))
    idx = np.array([0, 2, 2])

    def f(x):
        y = x.transpose(2, 0, 1).reshape(4, 6)
        return (y[1:3] * 2).sum() + (x[1, idx, :] ** 2).sum() + x.T.max()

    x = Tensor(x0, True)
    f(x).backward()
    num = central_diff(lambda v: float(f(Tensor(v)).value), x0)
    assert rel_err(x.grad, num) < 1e-6


def test_concat_stack_where_einsum_pad(rng):
    a0, b0 = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    cond = rng.random((2, 3)) > 0.5
    m = rng.standard_normal((3, 3))

    def f(a, b):
        c = concatenate([a, b], axis=1)
        s = stack([a, b], axis=0)
        p = pad_edge(a, [(1, 2), (0, 1)])
        return ((c ** 2).sum() + s.sum(axis=0).max() + (where(cond, a, b) * 3).sum()
                + einsum("ij,jk->ik", a, m).sum() + (p * p).sum())

    a, b = Tensor(a0, True), Tensor(b0, True)
    f(a, b).backward()
    na = central_diff(lambda x: float(f(Tensor(x), Tensor(b0)).value), a0)
    nb = central_diff(lambda x: float(f(Tensor(a0), Tensor(x)).value), b0)
    assert rel_err(a.grad, na) < 1e-6 and rel_err(b.grad, nb) < 1e-6


def test_clip_and_abs_subgradients():
    x = Tensor(np.array([-1.0, 0.0, 0.5, 2.0]), True)
    (x.clip(0.0, 1.0).sum() + x.abs().sum()).backward()
    # clip passes the boundary points, |.| has subgradient 0 at 0
    assert np.array_equal(x.grad, [0.0 - 1.0, 1.0 + 0.0, 1.0 + 1.0, 0.0 + 1.0])


def test_grad_reverse_negates_exactly(rng):
    x0 = rng.standard_normal(5)
    plain, rev = Tensor(x0, True), Tensor(x0, True)
    (plain.sin() * 3).sum().backward()
    (grad_reverse(rev).sin() * 3).sum().backward()
    assert np.array_equal(rev.grad, -plain.grad)
    assert np.array_equal(grad_reverse(Tensor(x0)).value, x0)


def test_shared_subexpression_accumulates():
    x = Tensor(np.array(3.0), True)
    y = x * x
    (y + y * x).backward()
    assert float(x.grad) == pytest.approx(2 * 3 + 3 * 9)


def test_constants_do_not_track():
    c = Tensor(np.ones(3))
    t = Tensor(np.ones(3), True)
    out = (c * 2 + t).sum()
    out.backward()
    assert c.grad is None and np.array_equal(t.grad, np.ones(3))
