import numpy as np
import pytest

from conftest import central_diff, rel_err
from spectrapipe.autodiff import Tensor
from spectrapipe.domain import DomainDiscriminator, discriminator_step, domain_loss


def bce_oracle(fs, fm, w, b):
    """Binary cross-entropy written out with log-sigmoid."""
    zs, zm = fs @ w + b, fm @ w + b
    ls = -np.log(1 - 1 / (1 + np.exp(-zs)))  # label 0
    lm = -np.log(1 / (1 + np.exp(-zm)))      # label 1
    return float(np.mean(np.concatenate([ls, lm])))


def test_zero_logit_gives_ln2(rng):
    disc = DomainDiscriminator.zeros(8)
    loss = domain_loss(rng.random((3, 8)), rng.random((2, 8)), disc)
    assert loss == pytest.approx(np.log(2), rel=1e-15)


def test_matches_bce_oracle(rng):
    fs, fm = rng.standard_normal((4, 6)), rng.standard_normal((3, 6))
    disc = DomainDiscriminator.init(6, seed=3)
    disc.bias = np.array([0.2])
    assert domain_loss(fs, fm, disc) == pytest.approx(
        bce_oracle(fs, fm, disc.weight, disc.bias), rel=1e-12)


def test_separated_features_drive_loss_to_zero():
    fs, fm = -np.ones((4, 2)), np.ones((4, 2))
    strong = DomainDiscriminator(np.array([50.0, 50.0]), np.zeros(1))
    assert 0 <= domain_loss(fs, fm, strong) < 1e-30


def test_list_features_and_single_vectors(rng):
    a, b = rng.standard_normal(5), rng.standard_normal(5)
    disc = DomainDiscriminator.init(5, 1)
    assert domain_loss([a], [b], disc) == pytest.approx(domain_loss(a, b, disc), rel=1e-15)


def test_reversal_negates_upstream_gradient(rng):
    x0 = rng.standard_normal((3, 4))
    m = rng.standard_normal((4, 4))
    disc = DomainDiscriminator.init(4, 2)

    def upstream(x):
        return (x @ m).sin()

    grads = {}
    for reverse in (False, True):
        x = Tensor(x0, True)
        feats = upstream(x)
        domain_loss(feats[:2], feats[2:], disc, reverse=reverse).backward()
        grads[reverse] = x.grad
    num = central_diff(lambda v: domain_loss(np.sin(v @ m)[:2], np.sin(v @ m)[2:], disc,
                                             reverse=False), x0)
    assert rel_err(grads[False], num) < 1e-6
    assert np.array_equal(grads[True], -grads[False])


def test_discriminator_gradient(rng):
    fs, fm = rng.standard_normal((4, 3)), rng.standard_normal((5, 3)) + 0.5
    w0, b0 = rng.standard_normal(3), np.array([0.1])
    w, b = Tensor(w0, True), Tensor(b0, True)
    domain_loss(fs, fm, DomainDiscriminator(w, b), reverse=False).backward()
    num = central_diff(lambda v: bce_oracle(fs, fm, v, b0), w0)
    assert rel_err(w.grad, num) < 1e-6


def test_frozen_trunk_training_is_monotone(rng):
    fs = rng.standard_normal((20, 4)) - 0.3
    fm = rng.standard_normal((20, 4)) + 0.3
    disc = DomainDiscriminator.zeros(4)
    trace = []
    for _ in range(100):
        disc, loss = discriminator_step(fs, fm, disc, lr=0.5)
        trace.append(loss)
    assert all(b <= a + 1e-15 for a, b in zip(trace, trace[1:]))
    assert trace[-1] < trace[0]
