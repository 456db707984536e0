"""Discrimination and calibration metrics.

Binning conventions: uniform bins put a confidence lying exactly on an
interior edge into the upper bin and close the last bin on the right.
Adaptive bins take a stable sort by confidence and cut it into contiguous
groups whose sizes differ by at most one, larger groups first.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import rankdata

CSV_COLUMNS = ("bin_lower", "bin_upper", "count", "accuracy", "confidence", "gap")


@dataclass
class PredictionSet:
    probs: np.ndarray   # (n, C)
    labels: np.ndarray  # (n,)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.probs.ndim != 2 or self.probs.shape[0] != self.labels.shape[0]:
            raise ValueError("probs must be (n, C) with one label per row")
        if self.probs.size and not np.allclose(self.probs.sum(axis=1), 1.0, atol=1e-9, rtol=0):
            raise ValueError("probability rows must sum to 1")

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]

    @property
    def preds(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)

    @property
    def confidence(self) -> np.ndarray:
        return self.probs.max(axis=1) if len(self) else np.zeros(0)

    @property
    def correct(self) -> np.ndarray:
        return (self.preds == self.labels).astype(np.float64)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class CalibrationBin:
    lower: float
    upper: float
    count: int
    accuracy: float
    confidence: float

    @property
    def gap(self) -> float:
        return abs(self.accuracy - self.confidence)


@dataclass
class CalibrationReport:
    ece: float
    aece: float
    macro_f1: float
    auc: Optional[float]
    bins: list = field(default_factory=list)
    adaptive_bins: list = field(default_factory=list)
    auc_skipped: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("bins", "adaptive_bins"):
            for b, raw in zip(d[key], getattr(self, key)):
                b["gap"] = raw.gap
        return d


def per_class_f1(y_true, y_pred, num_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    out = np.zeros(num_classes)
    for c in range(num_classes):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        denom = 2 * tp + fp + fn
        # 2PR/(P+R) == 2tp/(2tp+fp+fn); zero when precision + recall is zero
        out[c] = 2 * tp / denom if tp > 0 else 0.0
    return out


def macro_f1(y_true, y_pred, num_classes: int, skip_absent: bool = False) -> float:
    """Unweighted mean of per-class F1. Absent classes count as 0 unless ``skip_absent``."""
    if len(y_true) == 0:
        raise ValueError("macro F1 needs at least one sample")
    f1 = per_class_f1(y_true, y_pred, num_classes)
    if skip_absent:
        present = np.isin(np.arange(num_classes), np.concatenate([np.asarray(y_true), np.asarray(y_pred)]))
        return float(f1[present].mean())
    return float(f1.mean())


def binary_auc(scores, positive) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_macro_ovr(probs, labels):
    """Macro one-vs-rest AUC. Returns ``(auc, skipped_classes)``.

    A class without both positives and negatives is skipped.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    aucs, skipped = [], []
    for c in range(probs.shape[1]):
        pos = labels == c
        if pos.all() or not pos.any():
            skipped.append(c)
            continue
        aucs.append(binary_auc(probs[:, c], pos))
    if not aucs:
        raise ValueError("no class has both positive and negative samples")
    return float(np.mean(aucs)), skipped


def _weighted_gap(bins, n: int) -> float:
    return float(sum(b.count / n * b.gap for b in bins if b.count)) if n else 0.0


def ece(confidence, correct, n_bins: int = 15):
    """Expected calibration error over ``n_bins`` uniform bins. Returns ``(ece, bins)``."""
    if n_bins < 1:
        raise ValueError("need at least one bin")
    conf = np.asarray(confidence, dtype=np.float64)
    corr = np.asarray(correct, dtype=np.float64)
    if len(conf) == 0:
        return 0.0, []
    # m / M is correctly rounded; linspace can land an ulp off (0.6000000000000001 for 3/5)
    edges = np.arange(n_bins + 1) / n_bins
    idx = np.clip(np.searchsorted(edges, conf, side="right") - 1, 0, n_bins - 1)
    bins = []
    for m in range(n_bins):
        sel = idx == m
        k = int(sel.sum())
        acc = float(corr[sel].mean()) if k else 0.0
        cf = float(conf[sel].mean()) if k else 0.0
        bins.append(CalibrationBin(float(edges[m]), float(edges[m + 1]), k, acc, cf))
    return _weighted_gap(bins, len(conf)), bins


def adaptive_groups(n: int, n_bins: int) -> list:
    """Sizes of equal-count groups, larger first; never more groups than samples."""
    g = min(n_bins, n)
    if g == 0:
        return []
    base, extra = divmod(n, g)
    return [base + 1] * extra + [base] * (g - extra)


def aece(confidence, correct, n_bins: int = 15):
    """Adaptive ECE over equal-count groups. Returns ``(aece, bins)``."""
    if n_bins < 1:
        raise ValueError("need at least one bin")
    conf = np.asarray(confidence, dtype=np.float64)
    corr = np.asarray(correct, dtype=np.float64)
    order = np.argsort(conf, kind="stable")
    bins = []
    start = 0
    for size in adaptive_groups(len(conf), n_bins):
        sel = order[start:start + size]
        start += size
        c = conf[sel]
        bins.append(CalibrationBin(float(c.min()), float(c.max()), size,
                                   float(corr[sel].mean()), float(c.mean())))
    return _weighted_gap(bins, len(conf)), bins


def merge_bins(tables) -> list:
    """Pool uniform-bin tables that share edges (e.g. across folds) into one table."""
    tables = [t for t in tables if t]
    if not tables:
        return []
    out = []
    for group in zip(*tables):
        lo, hi = group[0].lower, group[0].upper
        if any(b.lower != lo or b.upper != hi for b in group):
            raise ValueError("bin tables have different edges")
        n = sum(b.count for b in group)
        acc = sum(b.count * b.accuracy for b in group) / n if n else 0.0
        conf = sum(b.count * b.confidence for b in group) / n if n else 0.0
        out.append(CalibrationBin(lo, hi, n, acc, conf))
    return out


def calibration_report(preds: PredictionSet, n_bins: int = 15,
                       skip_absent_f1: bool = False) -> CalibrationReport:
    conf, corr = preds.confidence, preds.correct
    e, bins = ece(conf, corr, n_bins)
    a, abins = aece(conf, corr, n_bins)
    f1 = macro_f1(preds.labels, preds.preds, preds.num_classes, skip_absent_f1)
    try:
        auc, skipped = auc_macro_ovr(preds.probs, preds.labels)
    except ValueError:
        auc, skipped = None, list(range(preds.num_classes))
    return CalibrationReport(e, a, f1, auc, bins, abins, skipped)


def reliability_export(bins, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for b in bins:
            w.writerow([repr(b.lower), repr(b.upper), b.count, repr(b.accuracy),
                        repr(b.confidence), repr(b.gap)])


def read_reliability(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [CalibrationBin(float(r["bin_lower"]), float(r["bin_upper"]), int(r["count"]),
                               float(r["accuracy"]), float(r["confidence"]))
                for r in reader]
