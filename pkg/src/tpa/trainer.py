"""Optimization loop, schedulers, and stratified cross-validation."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import Tape
from .config import Config
from .dataio import DataFormatError, Dataset, PromptBank, sample_clip, stratified_folds
from .metrics import CalibrationReport, PredictionSet, calibration_report
from .model import TPAModel

logger = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    pass


class Adam:
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteLossError("non-finite gradient")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


class ReduceLROnPlateau:
    """Maximizing plateau schedule: after ``patience`` epochs without an
    improvement above ``threshold`` the rate is multiplied by ``factor``."""

    def __init__(self, lr: float, factor: float = 0.1, patience: int = 5, threshold: float = 1e-6):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.best = -np.inf
        self.bad_epochs = 0

    def step(self, value: float) -> float:
        if value > self.best + self.threshold:
            self.best = value
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


def plateau_schedule(history, lr: float, factor: float = 0.1, patience: int = 5,
                     threshold: float = 1e-6) -> float:
    sched = ReduceLROnPlateau(lr, factor, patience, threshold)
    for v in history:
        sched.step(v)
    return sched.lr


def early_stop_check(history, patience: int = 10):
    """``(stop, best_epoch)`` with 1-based epochs; ties go to the earlier epoch."""
    if len(history) == 0:
        raise ValueError("empty history")
    best = int(np.argmax(history)) + 1
    return len(history) - best >= patience, best


@dataclass
class FoldResult:
    fold: int
    best_epoch: int
    state: dict = field(repr=False)
    report: CalibrationReport
    trace: list
    val_ids: list
    epochs_run: int

    def summary(self) -> dict:
        return {"fold": self.fold, "best_epoch": self.best_epoch, "epochs_run": self.epochs_run,
                "metrics": self.report.to_dict(), "trace": self.trace, "val_ids": self.val_ids}


def build_model(cfg: Config, dim: int, num_classes: int, rng) -> TPAModel:
    return TPAModel(dim, num_classes, cfg.extractor, cfg.classifier, cfg.cvaesm, rng)


def evaluate(model: TPAModel, ds: Dataset, prompts: np.ndarray, cfg: Config) -> PredictionSet:
    """Eval-mode predictions over ``ds`` in fixed-size batches of centred clips."""
    L, B = cfg.data.clip_len, cfg.trainer.batch
    probs = []
    for start in range(0, len(ds), B):
        recs = ds.records[start:start + B]
        clips = np.stack([sample_clip(r, L, "eval") for r in recs])
        probs.append(model.predict_proba(clips, prompts))
    probs = np.concatenate(probs) if probs else np.zeros((0, ds.num_classes))
    return PredictionSet(probs, ds.labels)


def fold_rngs(seed: int, fold: int):
    init, data, noise = np.random.SeedSequence([seed, fold]).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(data), np.random.default_rng(noise)


def train_fold(train: Dataset, val: Dataset, bank: PromptBank, cfg: Config, fold: int = 0) -> FoldResult:
    if len(train) == 0 or len(val) == 0:
        raise ValueError("train and validation splits must be non-empty")
    bank.check_against(train)
    if not cfg.data.allow_sparse and np.any(train.class_counts() == 0):
        raise DataFormatError("a class is missing from the training split (set allow_sparse to permit)")
    tc = cfg.trainer
    init_rng, data_rng, noise_rng = fold_rngs(tc.seed, fold)
    model = build_model(cfg, train.dim, train.num_classes, init_rng)
    params = list(model.parameters().values())
    opt = Adam(params, lr=tc.lr)
    sched = ReduceLROnPlateau(tc.lr, tc.sched_factor, tc.sched_patience)
    fixed_prompts = bank.embeddings
    L, B = cfg.data.clip_len, tc.batch

    history, trace = [], []
    best_state, best_report = None, None
    for epoch in range(1, tc.epochs + 1):
        prompts = bank.epoch_view(cfg.classifier.randomize_prompts, data_rng)
        order = data_rng.permutation(len(train))
        total, seen = 0.0, 0
        for start in range(0, len(order), B):
            recs = [train.records[i] for i in order[start:start + B]]
            clips = np.stack([sample_clip(r, L, "train", data_rng) for r in recs])
            y = np.array([r.label for r in recs])
            with Tape() as tape:
                out = model.loss(clips, y, prompts, rng=noise_rng)
                loss = out["loss"]
                if not np.isfinite(loss.item()):
                    raise NonFiniteLossError(f"non-finite loss at fold {fold}, epoch {epoch}")
                tape.backward(loss)
            opt.step()
            opt.zero_grad()
            total += loss.item() * len(recs)
            seen += len(recs)

        report = calibration_report(evaluate(model, val, fixed_prompts, cfg),
                                    cfg.metrics.bins, cfg.metrics.skip_absent_f1)
        f1 = report.macro_f1
        history.append(f1)
        trace.append({"epoch": epoch, "lr": opt.lr, "train_loss": total / seen,
                      "val_macro_f1": f1, "val_ece": report.ece})
        if best_report is None or f1 > max(history[:-1]):
            best_state, best_report = model.state_dict(), report
        opt.lr = sched.step(f1)
        stop, best_epoch = early_stop_check(history, tc.early_patience)
        logger.debug("fold %d epoch %d loss %.4f f1 %.4f", fold, epoch, total / seen, f1)
        if stop:
            break

    _, best_epoch = early_stop_check(history, tc.early_patience)
    return FoldResult(fold, best_epoch, best_state, best_report, trace,
                      [r.id for r in val.records], len(history))


@dataclass
class CVResult:
    config: Config
    folds: list
    aggregate: dict

    def report(self) -> dict:
        return {"config": self.config.to_dict(), "aggregate": self.aggregate,
                "folds": [f.summary() for f in self.folds]}

    def report_json(self) -> str:
        return json.dumps(self.report(), indent=1, sort_keys=True)


AGG_METRICS = ("macro_f1", "auc", "ece", "aece")


def aggregate(folds) -> dict:
    """Mean and population standard deviation of each metric across folds."""
    out = {}
    for name in AGG_METRICS:
        vals = [getattr(f.report, name) for f in folds]
        vals = [v for v in vals if v is not None]
        if vals:
            out[name] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)), "n": len(vals)}
    return out


def _run_fold(args):
    ds, bank, cfg, plan, i = args
    train_idx, val_idx = plan.split(i)
    return train_fold(ds.subset(train_idx), ds.subset(val_idx), bank, cfg, fold=i)


def cross_validate(ds: Dataset, bank: PromptBank, cfg: Config, k: Optional[int] = None,
                   parallel: int = 1) -> CVResult:
    k = cfg.trainer.folds if k is None else k
    bank.check_against(ds)
    plan = stratified_folds(ds, k, cfg.trainer.seed, cfg.data.allow_sparse)
    jobs = [(ds, bank, cfg, plan, i) for i in range(k)]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            folds = list(pool.map(_run_fold, jobs))
    else:
        folds = [_run_fold(j) for j in jobs]
    return CVResult(cfg, folds, aggregate(folds))
