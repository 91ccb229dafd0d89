"""Binary classification metrics with explicit zero-division conventions.

Conventions: predicted positive means ``prob >= threshold``; precision,
recall, F1 and each balanced-accuracy term are 0 when their denominator is
0; MCC is 0 when its denominator is 0; ROC-AUC and AUPRC are NaN when the
labels contain a single class. Log-loss clips probabilities to
[1e-15, 1 - 1e-15].
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from ..errors import EmptyInput, LengthMismatch

CLIP = 1e-15
SCALAR_METRICS = ("accuracy", "balanced_accuracy", "precision", "recall", "f1", "mcc",
                  "log_loss", "roc_auc", "auprc")
LOWER_IS_BETTER = frozenset({"log_loss"})
# undefined (or degenerate) when a resample holds only one class
CLASS_CONDITIONAL = frozenset({"balanced_accuracy", "recall", "mcc", "roc_auc", "auprc"})


@dataclass
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsReport:
    accuracy: float
    balanced_accuracy: float
    precision: float
    recall: float
    f1: float
    mcc: float
    log_loss: float
    roc_auc: float
    auprc: float
    cm: ConfusionMatrix
    n: int
    threshold: float = 0.5
    seed: int | None = None
    cis: dict | None = None
    ci_skipped: dict | None = None
    tag: str | None = None
    extra: dict = field(default_factory=dict)

    def scalars(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in SCALAR_METRICS}

    def to_json(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, float) and math.isnan(v):
                out[k] = None
        if self.cis is not None:
            out["cis"] = {k: list(v) for k, v in self.cis.items()}
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "MetricsReport":
        obj = dict(obj)
        obj["cm"] = ConfusionMatrix(**obj["cm"])
        for m in SCALAR_METRICS:
            if obj.get(m) is None:
                obj[m] = float("nan")
        if obj.get("cis") is not None:
            obj["cis"] = {k: tuple(v) for k, v in obj["cis"].items()}
        return cls(**obj)


def _check(labels, probs):
    y = np.asarray(labels)
    p = np.asarray(probs, dtype=np.float64)
    if y.shape != p.shape or y.ndim != 1:
        raise LengthMismatch(f"labels {y.shape} and probabilities {p.shape} differ")
    if len(y) == 0:
        raise EmptyInput("no rows to evaluate")
    return y.astype(np.int64), p


def confusion(labels, probs, threshold: float = 0.5) -> ConfusionMatrix:
    y, p = _check(labels, probs)
    pred = p >= threshold
    pos = y == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(len(y) - tp - fp - fn)
    return ConfusionMatrix(tp, fp, tn, fn)


def _div(a: float, b: float) -> float:
    return a / b if b else 0.0


def cm_metrics(cm: ConfusionMatrix) -> dict[str, float]:
    tp, fp, tn, fn = cm.tp, cm.fp, cm.tn, cm.fn
    precision = _div(tp, tp + fp)
    recall = _div(tp, tp + fn)
    f1 = _div(2 * precision * recall, precision + recall)
    denom = float(tp + fp) * float(tp + fn) * float(tn + fp) * float(tn + fn)
    mcc = (float(tp) * tn - float(fp) * fn) / math.sqrt(denom) if denom > 0 else 0.0
    return {
        "accuracy": _div(tp + tn, cm.n),
        "balanced_accuracy": 0.5 * (_div(tp, tp + fn) + _div(tn, tn + fp)),
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "mcc": mcc,
    }


def log_loss(labels, probs) -> float:
    y, p = _check(labels, probs)
    p = np.clip(p, CLIP, 1 - CLIP)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def roc_auc(labels, probs) -> float:
    """Mann-Whitney form: P(score_T > score_NT) + 0.5 P(tie)."""
    y, p = _check(labels, probs)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(p)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def pr_curve(labels, probs):
    """(thresholds, precision, recall) at every distinct score, descending."""
    y, p = _check(labels, probs)
    order = np.argsort(-p, kind="mergesort")
    ps, ys = p[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(ps) != 0), len(ps) - 1]
    tp = np.cumsum(ys)[last].astype(np.float64)
    fp = (last + 1) - tp
    n_pos = ys.sum()
    precision = tp / (tp + fp)
    recall = tp / n_pos if n_pos else np.zeros_like(tp)
    return ps[last], precision, recall


def roc_curve(labels, probs):
    """(thresholds, fpr, tpr) at every distinct score, descending."""
    y, p = _check(labels, probs)
    order = np.argsort(-p, kind="mergesort")
    ps, ys = p[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(ps) != 0), len(ps) - 1]
    tp = np.cumsum(ys)[last].astype(np.float64)
    fp = (last + 1) - tp
    n_pos, n_neg = ys.sum(), len(ys) - ys.sum()
    tpr = tp / n_pos if n_pos else np.zeros_like(tp)
    fpr = fp / n_neg if n_neg else np.zeros_like(fp)
    return ps[last], fpr, tpr


def auprc(labels, probs) -> float:
    """Step-wise area: sum over thresholds of (recall gain) * precision."""
    y, _ = _check(labels, probs)
    if y.sum() == 0 or y.sum() == len(y):
        return float("nan")
    _, precision, recall = pr_curve(labels, probs)
    gains = np.diff(np.r_[0.0, recall])
    return float(np.sum(gains * precision))


def compute_metrics(labels, probs, threshold: float = 0.5, with_ci: bool = False,
                    seed: int = 0, n_resamples: int = 599, threads: int = 1) -> MetricsReport:
    y, p = _check(labels, probs)
    cm = confusion(y, p, threshold)
    vals = cm_metrics(cm)
    report = MetricsReport(
        **vals,
        log_loss=log_loss(y, p),
        roc_auc=roc_auc(y, p),
        auprc=auprc(y, p),
        cm=cm,
        n=len(y),
        threshold=threshold,
        seed=seed,
    )
    if with_ci:
        from .bootstrap import bootstrap_ci

        res = bootstrap_ci(y, p, SCALAR_METRICS, n_resamples, seed, threshold, threads)
        report.cis, report.ci_skipped = res.intervals, res.skipped
    return report


def metric_value(name: str, labels, probs, threshold: float = 0.5) -> float:
    return all_metric_values(labels, probs, threshold)[name]


def all_metric_values(labels, probs, threshold: float = 0.5) -> dict[str, float]:
    y, p = _check(labels, probs)
    out = cm_metrics(confusion(y, p, threshold))
    out["log_loss"] = log_loss(y, p)
    out["roc_auc"] = roc_auc(y, p)
    out["auprc"] = auprc(y, p)
    return out
