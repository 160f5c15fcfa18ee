"""Adversarial domain alignment between the spectral and material datasets.

A logistic discriminator tries to tell pooled trunk features of spectral
samples (label 0) from material samples (label 1).  Features pass through a
gradient-reversal junction, so the same backward pass trains the
discriminator to separate the domains and the trunk to confuse it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, concatenate, grad_reverse, is_tensor


@dataclass
class DomainDiscriminator:
    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def zeros(cls, width=64):
        return cls(np.zeros(width), np.zeros(1))

    @classmethod
    def init(cls, width=64, seed=0):
        rng = np.random.default_rng(seed)
        a = np.sqrt(6.0 / (width + 1))
        return cls(rng.uniform(-a, a, width), np.zeros(1))

    def logits(self, features):
        f = as_tensor(features)
        if f.ndim == 1:
            f = f.reshape(1, -1)
        w = as_tensor(self.weight).reshape(-1, 1)
        return (f @ w).reshape(-1) + self.bias


def _stack_features(features):
    if isinstance(features, (list, tuple)):
        rows = [as_tensor(f).reshape(1, -1) for f in features]
        return concatenate(rows, axis=0)
    f = as_tensor(features)
    return f.reshape(1, -1) if f.ndim == 1 else f


def domain_loss(features_s, features_m, disc, reverse=True):
    """Mean binary cross-entropy of the discriminator over both domains.

    With ``reverse`` the features go through :func:`grad_reverse` first, so
    anything upstream of them receives the negated gradient.
    """
    fs, fm = _stack_features(features_s), _stack_features(features_m)
    if reverse:
        fs, fm = grad_reverse(fs), grad_reverse(fm)
    zs, zm = disc.logits(fs), disc.logits(fm)
    # BCE with logits: label 0 -> softplus(z), label 1 -> softplus(-z)
    loss = concatenate([zs.softplus(), (-zm).softplus()]).mean()
    if is_tensor(features_s, features_m, disc.weight, disc.bias) and loss.requires_grad:
        return loss
    return float(loss.value)


def discriminator_step(features_s, features_m, disc, lr):
    """One full-batch gradient step on the discriminator alone (trunk frozen)."""
    w, b = Tensor(disc.weight, requires_grad=True), Tensor(disc.bias, requires_grad=True)
    loss = domain_loss(np.asarray(features_s), np.asarray(features_m),
                       DomainDiscriminator(w, b), reverse=False)
    loss.backward()
    return DomainDiscriminator(disc.weight - lr * w.grad, disc.bias - lr * b.grad), float(loss.value)
