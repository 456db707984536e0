"""Registered gradient checks: every engine op plus both end-to-end model losses."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import Config
from .cvaesm import GaussianParams, kl_divergence, modulate, reparameterize
from .gradcheck import grad_check
from .head import ce_loss, ctr_loss
from .model import TPAModel
from .temporal import KINDS

# small shapes keep the finite-difference sweep fast
DIM, HIDDEN, CLASSES, CLIP, BATCH = 5, 6, 3, 6, 2
COMPONENTS_PER_TENSOR = 6


def _weighted(out: Tensor, rng) -> Tensor:
    """Reduce to a scalar with random weights so every output entry matters."""
    return ad.sum(ad.mul(out, rng.standard_normal(out.shape)))


def op_cases(seed: int):
    """``(name, f, x)`` triples covering each differentiable op and each input slot."""
    rng = np.random.default_rng(seed)
    r = lambda *s: rng.standard_normal(s)
    A, B = r(3, 4), r(3, 4)
    pos = rng.uniform(0.5, 2.0, (3, 4))
    W, bias = r(4, 2), r(2)
    K = r(3, 2, 3)
    X = r(7, 2)
    cases = []

    def add_case(name, fn, x):
        key = [seed, len(cases)]
        cases.append((name, lambda t: _weighted(fn(t), np.random.default_rng(key)), x))

    add_case("add", lambda t: ad.add(t, B), A)
    add_case("sub[a]", lambda t: ad.sub(t, B), A)
    add_case("sub[b]", lambda t: ad.sub(A, t), B)
    add_case("mul[a]", lambda t: ad.mul(t, B), A)
    add_case("mul[b]", lambda t: ad.mul(A, t), B)
    add_case("div[a]", lambda t: ad.div(t, pos), A)
    add_case("div[b]", lambda t: ad.div(A, t), pos)
    add_case("scale", lambda t: ad.scale(t, -2.5), A)
    add_case("exp", ad.exp, A)
    add_case("log", ad.log, pos)
    add_case("relu", ad.relu, A)
    add_case("sigmoid", ad.sigmoid, A)
    add_case("square", ad.square, A)
    add_case("clip", lambda t: ad.clip(t, -0.5, 0.5), A)
    add_case("matmul[a]", lambda t: ad.matmul(t, W), A)
    add_case("matmul[b]", lambda t: ad.matmul(A, t), W)
    add_case("linear[x]", lambda t: ad.linear(t, W, bias), A)
    add_case("linear[W]", lambda t: ad.linear(A, t, bias), W)
    add_case("linear[b]", lambda t: ad.linear(A, W, t), bias)
    for pad, dil in (("same", 1), ("same", 2), ("causal", 1), ("causal", 2)):
        add_case(f"conv1d[{pad},d{dil},x]", lambda t, p=pad, d=dil: ad.conv1d(t, K, bias[:1].repeat(3), p, d), X)
        add_case(f"conv1d[{pad},d{dil},k]", lambda t, p=pad, d=dil: ad.conv1d(X, t, None, p, d), K)
    add_case("reduce[mean]", lambda t: ad.reduce(t, "mean"), A)
    add_case("reduce[max]", lambda t: ad.reduce(t, "max"), A)
    add_case("sum", lambda t: ad.sum(t, axis=1), A)
    add_case("concat", lambda t: ad.concat([t, B, t], axis=-1), A)
    add_case("take", lambda t: ad.take(t, (np.array([0, 2, 2]), np.array([1, 3, 3]))), A)
    add_case("reshape", lambda t: ad.reshape(t, (2, 6)), A)
    add_case("cosine[a]", lambda t: ad.cosine_similarity(t, B), A)
    add_case("cosine[b]", lambda t: ad.cosine_similarity(A, t), B)
    add_case("log_softmax", ad.log_softmax, A)
    add_case("softmax", ad.softmax, A)

    # composite pieces of the objective
    s = rng.uniform(-1, 1, (4, CLASSES))
    y = rng.integers(0, CLASSES, 4)
    p = np.exp(s) / np.exp(s).sum(axis=1, keepdims=True)
    cases.append(("ce_loss", lambda t: ce_loss(t, y), p))
    cases.append(("ctr_loss", lambda t: ctr_loss(t, y, 0.5), s))
    mu_q, lv_q, mu_p, lv_p = r(2, 4), 0.5 * r(2, 4), r(2, 4), 0.5 * r(2, 4)
    eps = r(2, 4)
    cases.append(("kl[mu_q]", lambda t: ad.sum(kl_divergence(GaussianParams(t, Tensor(lv_q)),
                                                             GaussianParams(Tensor(mu_p), Tensor(lv_p)))), mu_q))
    cases.append(("kl[log_var_q]", lambda t: ad.sum(kl_divergence(GaussianParams(Tensor(mu_q), t),
                                                                  GaussianParams(Tensor(mu_p), Tensor(lv_p)))), lv_q))
    cases.append(("kl[log_var_p]", lambda t: ad.sum(kl_divergence(GaussianParams(Tensor(mu_q), Tensor(lv_q)),
                                                                  GaussianParams(Tensor(mu_p), t))), lv_p))
    add_case("reparameterize[mu]", lambda t: reparameterize(GaussianParams(t, Tensor(lv_q)), eps=eps), mu_q)
    add_case("reparameterize[log_var]", lambda t: reparameterize(GaussianParams(Tensor(mu_q), t), eps=eps), lv_q)
    add_case("modulate[h]", lambda t: modulate(t, Tensor(B)), A)
    add_case("modulate[g]", lambda t: modulate(Tensor(A), t), B)
    return cases


def small_config(kind: str, cvaesm: bool) -> Config:
    return Config().replace(**{
        "extractor.kind": kind, "extractor.hidden": HIDDEN, "extractor.gnn_window": 3,
        "cvaesm.enabled": cvaesm,
    })


def model_cases(seed: int, kind: str, cvaesm: bool):
    """Gradient checks of the full training loss with respect to every parameter tensor,
    the input clips, and the prompt embeddings."""
    rng = np.random.default_rng([seed, KINDS.index(kind), int(cvaesm)])
    cfg = small_config(kind, cvaesm)
    model = TPAModel(DIM, CLASSES, cfg.extractor, cfg.classifier, cfg.cvaesm, rng)
    if model.cvaesm is not None:
        # the default zero init of g's output layer hides gradient paths
        model.cvaesm.g2.W.data[...] = rng.standard_normal(model.cvaesm.g2.W.shape) * 0.3
    clips = rng.standard_normal((BATCH, CLIP, DIM))
    prompts = rng.standard_normal((CLASSES, DIM))
    y = rng.integers(0, CLASSES, BATCH)
    eps = rng.standard_normal((BATCH, HIDDEN)) if cvaesm else None
    tag = f"model[{kind},{'cvaesm' if cvaesm else 'plain'}]"

    cases = []
    for name, param in model.parameters().items():
        def f(t, name=name):
            old = model.swap_param(name, t)
            try:
                return model.loss(clips, y, prompts, eps=eps)["loss"]
            finally:
                model.swap_param(name, old)
        n = param.data.size
        comp = rng.choice(n, size=min(n, COMPONENTS_PER_TENSOR), replace=False)
        cases.append((f"{tag}.{name}", f, param.data.copy(), comp))
    comp = rng.choice(clips.size, size=COMPONENTS_PER_TENSOR, replace=False)
    cases.append((f"{tag}.clips", lambda t: model.loss(t, y, prompts, eps=eps)["loss"], clips, comp))
    comp = rng.choice(prompts.size, size=COMPONENTS_PER_TENSOR, replace=False)
    cases.append((f"{tag}.prompts", lambda t: model.loss(clips, y, t, eps=eps)["loss"], prompts, comp))
    return cases


@dataclass
class CheckRow:
    name: str
    passed: bool
    max_rel_error: float
    runs: int
    excluded: int


def run_suite(seeds=range(10), tol: float = 1e-4, include_models: bool = True) -> list:
    """One row per registered check, worst error across seeds."""
    rows: dict = {}

    def record(name, res):
        row = rows.get(name)
        if row is None:
            rows[name] = CheckRow(name, res.passed, res.max_rel_error, 1, res.excluded)
        else:
            row.passed &= res.passed
            row.max_rel_error = max(row.max_rel_error, res.max_rel_error)
            row.runs += 1
            row.excluded += res.excluded

    for seed in seeds:
        for name, f, x in op_cases(seed):
            record(f"op:{name}", grad_check(f, x, tol=tol))
        if include_models:
            for kind in KINDS:
                for cv in (False, True):
                    for name, f, x, comp in model_cases(seed, kind, cv):
                        res = grad_check(f, x, tol=tol, components=comp)
                        # aggregate per model path rather than per tensor
                        record(name.split(".", 1)[0], res)
    return list(rows.values())


def format_table(rows, elapsed: float = None) -> str:
    width = max(len(r.name) for r in rows)
    lines = [f"{'check':<{width}}  {'result':<6}  max_rel_err  excluded"]
    for r in rows:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.max_rel_error:11.3e}  {r.excluded:8d}")
    n_fail = sum(not r.passed for r in rows)
    tail = f"{len(rows) - n_fail}/{len(rows)} checks passed"
    if elapsed is not None:
        tail += f" in {elapsed:.1f}s"
    lines.append(tail)
    return "\n".join(lines)


def timed_suite(seeds=range(10), tol: float = 1e-4, include_models: bool = True):
    t0 = time.perf_counter()
    rows = run_suite(seeds, tol, include_models)
    return rows, time.perf_counter() - t0
