"""Conditional variational style modulation of the video embedding.

A posterior head sees ``[h; onehot(y)]``, a prior head sees ``h`` alone.
Training draws ``z`` from the posterior by reparameterization; evaluation
uses the prior mean. ``z`` rescales ``h`` element-wise through a small MLP.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import Linear, Module

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0


@dataclass
class CVAESMConfig:
    enabled: bool = False
    beta: float = 0.2
    mc_samples: int = 1

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")


@dataclass
class GaussianParams:
    mu: Tensor
    log_var: Tensor


def _split(out: Tensor, width: int) -> GaussianParams:
    mu = ad.take(out, (Ellipsis, slice(0, width)))
    log_var = ad.clip(ad.take(out, (Ellipsis, slice(width, 2 * width))), LOG_VAR_MIN, LOG_VAR_MAX)
    return GaussianParams(mu, log_var)


def one_hot(y, num_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if np.any(y < 0) or np.any(y >= num_classes):
        raise ValueError(f"label outside [0, {num_classes})")
    return np.eye(num_classes)[y]


class CVAESM(Module):
    def __init__(self, rng: np.random.Generator, hidden: int, num_classes: int):
        super().__init__()
        self.hidden = hidden
        self.num_classes = num_classes
        self.post = self.add_child("post", Linear(rng, hidden + num_classes, 2 * hidden))
        self.prior = self.add_child("prior", Linear(rng, hidden, 2 * hidden))
        self.g1 = self.add_child("g1", Linear(rng, hidden, hidden))
        self.g2 = self.add_child("g2", Linear(rng, hidden, hidden))
        # start as the identity modulation; g2 still receives gradient
        self.g2.zero_()

    def posterior_params(self, h, y) -> GaussianParams:
        h = ad.as_tensor(h)
        yh = one_hot(y, self.num_classes)
        if h.ndim == 1:
            yh = yh.reshape(-1)
        return _split(self.post(ad.concat([h, Tensor(yh)], axis=-1)), self.hidden)

    def prior_params(self, h) -> GaussianParams:
        return _split(self.prior(h), self.hidden)

    def g(self, z) -> Tensor:
        return self.g2(ad.relu(self.g1(z)))

    def modulate(self, h, z) -> Tensor:
        return modulate(h, self.g(z))


def reparameterize(params: GaussianParams, rng: Optional[np.random.Generator] = None,
                   eps: Optional[np.ndarray] = None) -> Tensor:
    """``mu + exp(log_var / 2) * eps``; ``eps`` is a constant, so no gradient reaches it."""
    if eps is None:
        eps = rng.standard_normal(params.mu.shape)
    sigma = ad.exp(ad.scale(params.log_var, 0.5))
    return ad.add(params.mu, ad.mul(sigma, Tensor(eps)))


def inference_latent(prior: GaussianParams) -> Tensor:
    return prior.mu


def kl_divergence(q: GaussianParams, p: GaussianParams) -> Tensor:
    """KL(q || p) for diagonal Gaussians, summed over the last axis."""
    # exp(lv_q - lv_p) rather than exp(lv_q) * exp(-lv_p) so that KL(q || q) is exactly 0
    ratio = ad.exp(ad.sub(q.log_var, p.log_var))
    diff = ad.sub(q.mu, p.mu)
    term = ad.add(ad.scale(ad.sub(p.log_var, q.log_var), 0.5),
                  ad.scale(ad.add(ratio, ad.mul(ad.square(diff), ad.exp(ad.neg(p.log_var)))), 0.5))
    return ad.sum(ad.sub(term, 0.5), axis=-1)


def modulate(h, g_out) -> Tensor:
    """``h * (1 + g_out)``."""
    return ad.mul(h, ad.add(g_out, 1.0))
