"""Prompt projection, cosine scoring, temperature softmax, and the losses."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import Linear

P_FLOOR = 1e-12


@dataclass
class ClassifierConfig:
    tau: float = 0.1
    margin: float = 0.5
    alpha: float = 0.5
    randomize_prompts: bool = False

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.margin < 0 or self.alpha < 0:
            raise ValueError("margin and alpha must be >= 0")


class PromptProjection(Linear):
    """Trainable map from text-embedding space into the video-embedding space, shared by all classes."""

    def __init__(self, rng, dim: int, hidden: int):
        super().__init__(rng, dim, hidden)


def project_prompts(prompts, proj: PromptProjection) -> Tensor:
    prompts = ad.as_tensor(prompts)
    if prompts.shape[-1] != proj.W.shape[0]:
        raise ad.ShapeError(f"prompt width {prompts.shape[-1]} != projection input {proj.W.shape[0]}")
    return proj(prompts)


def similarity_scores(h, prompts_proj) -> Tensor:
    """``s[..., c] = cos(h, prompts_proj[c])`` for ``h`` of shape ``(..., H)``."""
    h = ad.as_tensor(h)
    h_e = ad.reshape(h, h.shape[:-1] + (1, h.shape[-1]))
    return ad.cosine_similarity(h_e, prompts_proj)


def classify(s, tau: float) -> Tensor:
    return ad.softmax(ad.scale(ad.as_tensor(s), 1.0 / tau), axis=-1)


def log_classify(s, tau: float) -> Tensor:
    return ad.log_softmax(ad.scale(ad.as_tensor(s), 1.0 / tau), axis=-1)


def _rows(x: Tensor, y):
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if x.ndim == 1:
        x = ad.reshape(x, (1, -1))
    return x, y


def ce_loss(p, y) -> Tensor:
    """Mean of ``-log p_y`` with ``p_y`` floored at 1e-12."""
    p, y = _rows(ad.as_tensor(p), y)
    py = ad.take(p, (np.arange(len(y)), y))
    return ad.mean(ad.neg(ad.log(ad.clip(py, P_FLOOR, 1.0))))


def ce_loss_from_logprobs(logp, y) -> Tensor:
    """Same floor as :func:`ce_loss`, applied in log space."""
    logp, y = _rows(ad.as_tensor(logp), y)
    lpy = ad.take(logp, (np.arange(len(y)), y))
    return ad.mean(ad.neg(ad.clip(lpy, math.log(P_FLOOR), 0.0)))


def hardest_negative(s: np.ndarray, y) -> np.ndarray:
    """Index of the largest non-target score per row (first on ties)."""
    s = np.atleast_2d(s)
    y = np.atleast_1d(y)
    masked = s.copy()
    masked[np.arange(len(y)), y] = -np.inf
    return np.argmax(masked, axis=1)


def ctr_loss(s, y, margin: float) -> Tensor:
    """Batch mean of ``max(0, m - s_y + max_{j != y} s_j)``."""
    s, y = _rows(ad.as_tensor(s), y)
    n, C = s.shape
    if C < 2:
        raise ValueError("contrastive loss needs at least two classes")
    rows = np.arange(n)
    cols = np.arange(C)
    neg_idx = np.stack([cols[cols != yi] for yi in y])
    pos = ad.take(s, (rows, y))
    hard = ad.maximum_over(ad.take(s, (rows[:, None], neg_idx)), axis=-1)
    return ad.mean(ad.relu(ad.add(ad.sub(hard, pos), margin)))


def total_loss(ce, ctr, kl=None, alpha: float = 0.5, beta: float = 0.2) -> Tensor:
    """``ce + alpha * ctr (+ beta * kl)``; the KL term only when given."""
    out = ad.add(ce, ad.scale(ad.as_tensor(ctr), alpha))
    if kl is not None:
        out = ad.add(out, ad.scale(ad.as_tensor(kl), beta))
    return out
