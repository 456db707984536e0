"""The assembled classifier: extractor, prompt projection, optional style modulation."""
from __future__ import annotations

from collections import OrderedDict
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .cvaesm import CVAESM, CVAESMConfig, inference_latent, kl_divergence, reparameterize
from .head import (ClassifierConfig, PromptProjection, ce_loss_from_logprobs, ctr_loss,
                   log_classify, project_prompts, similarity_scores, total_loss)
from .layers import Module
from .temporal import ExtractorConfig, build_extractor


class TPAModel(Module):
    def __init__(self, dim: int, num_classes: int, extractor: ExtractorConfig,
                 classifier: ClassifierConfig, cvaesm: CVAESMConfig, rng: np.random.Generator):
        super().__init__()
        self.dim = dim
        self.num_classes = num_classes
        self.extractor_cfg = extractor
        self.classifier_cfg = classifier
        self.cvaesm_cfg = cvaesm
        self.extractor = self.add_child("extractor", build_extractor(extractor, dim, rng))
        self.proj = self.add_child("proj", PromptProjection(rng, dim, extractor.hidden))
        self.cvaesm = None
        if cvaesm.enabled:
            self.cvaesm = self.add_child("cvaesm", CVAESM(rng, extractor.hidden, num_classes))

    def scores(self, h, prompts) -> Tensor:
        return similarity_scores(h, project_prompts(prompts, self.proj))

    def loss(self, clips, y, prompts, rng: Optional[np.random.Generator] = None,
             eps: Optional[np.ndarray] = None) -> dict:
        """Training objective on a batch of clips ``(B, L, D)`` with labels ``y``.

        With style modulation on, ``z`` comes from the posterior via
        reparameterization (``eps`` may be given to fix the noise).
        """
        cfg = self.classifier_cfg
        h = self.extractor(clips)
        kl = None
        if self.cvaesm is not None:
            q = self.cvaesm.posterior_params(h, y)
            p = self.cvaesm.prior_params(h)
            z = reparameterize(q, rng, eps)
            h = self.cvaesm.modulate(h, z)
            kl = ad.mean(kl_divergence(q, p))
        s = self.scores(h, prompts)
        ce = ce_loss_from_logprobs(log_classify(s, cfg.tau), y)
        ctr = ctr_loss(s, y, cfg.margin)
        beta = self.cvaesm_cfg.beta if kl is not None else 0.0
        total = total_loss(ce, ctr, kl, cfg.alpha, beta)
        return {"loss": total, "ce": ce, "ctr": ctr, "kl": kl, "scores": s}

    def eval_scores(self, clips, prompts) -> Tensor:
        h = self.extractor(clips)
        if self.cvaesm is not None:
            h = self.cvaesm.modulate(h, inference_latent(self.cvaesm.prior_params(h)))
        return self.scores(h, prompts)

    def predict_proba(self, clips, prompts) -> np.ndarray:
        """Deterministic eval-mode class probabilities; ``z`` is the prior mean."""
        with no_grad():
            s = self.eval_scores(clips, prompts)
            return np.exp(log_classify(s, self.classifier_cfg.tau).data)

    def predictive_uncertainty(self, clips, prompts, k: int, rng: np.random.Generator):
        """Monte Carlo over the prior: mean probabilities, per-class variance, entropy of the mean.

        Without style modulation every draw is identical, so the variance is zero.
        """
        if k < 1:
            raise ValueError("need at least one sample")
        tau = self.classifier_cfg.tau
        with no_grad():
            h = self.extractor(clips)
            draws = []
            if self.cvaesm is None:
                draws = [np.exp(log_classify(self.scores(h, prompts), tau).data)] * k
            else:
                prior = self.cvaesm.prior_params(h)
                for _ in range(k):
                    z = reparameterize(prior, rng)
                    s = self.scores(self.cvaesm.modulate(h, z), prompts)
                    draws.append(np.exp(log_classify(s, tau).data))
        stack = np.stack(draws)
        mean = stack.mean(axis=0)
        var = stack.var(axis=0) if k > 1 else np.zeros_like(mean)
        entropy = predictive_entropy(mean)
        return mean, var, entropy

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.parameters().items())

    def load_state_dict(self, state) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data[...] = arr


def predictive_entropy(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    logp = np.log(np.where(p > 0, p, 1.0))
    return -np.sum(p * logp, axis=-1)
