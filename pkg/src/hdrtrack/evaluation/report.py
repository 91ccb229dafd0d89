"""Human tables and plot-data exports for metric reports."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Mapping

import numpy as np

from .metrics import MetricsReport, pr_curve, roc_curve

COLUMNS = [
    ("Accuracy", "accuracy"), ("Log-Loss", "log_loss"), ("ROC-AUC", "roc_auc"),
    ("AUPRC", "auprc"), ("BACC", "balanced_accuracy"), ("F1-Score", "f1"),
    ("Precision", "precision"), ("Recall", "recall"), ("MCC", "mcc"),
]
COUNTS = [("FP", "fp"), ("TN", "tn"), ("FN", "fn"), ("TP", "tp")]


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "-"
    return f"{x:.3f}"


def format_table(reports: Mapping[str, MetricsReport]) -> str:
    """One row per model, CI line beneath when intervals exist."""
    header = ["Model"] + [c for c, _ in COLUMNS] + [c for c, _ in COUNTS]
    rows = [header]
    for name, rep in reports.items():
        rows.append([name] + [_fmt(getattr(rep, a)) for _, a in COLUMNS]
                    + [str(getattr(rep.cm, a)) for _, a in COUNTS])
        if rep.cis:
            ci = [f"[{_fmt(rep.cis[a][0])};{_fmt(rep.cis[a][1])}]" if a in rep.cis else "-"
                  for _, a in COLUMNS]
            rows.append([""] + ci + ["-"] * len(COUNTS))
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for k, r in enumerate(rows):
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(r, widths)).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def reliability_bins(labels, probs, n_bins: int = 10):
    labels = np.asarray(labels, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    which = np.clip(np.searchsorted(edges, probs, side="right") - 1, 0, n_bins - 1)
    out = []
    for b in range(n_bins):
        sel = which == b
        cnt = int(sel.sum())
        out.append((edges[b], edges[b + 1], cnt,
                    float(probs[sel].mean()) if cnt else float("nan"),
                    float(labels[sel].mean()) if cnt else float("nan")))
    return out


def write_plot_data(labels, probs, out_dir, prefix: str = "") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def dump(name, header, rows):
        path = out_dir / f"{prefix}{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                            for v in row])
        written.append(path)

    thr, prec, rec = pr_curve(labels, probs)
    dump("pr_curve", ["threshold", "precision", "recall"], zip(thr, prec, rec))
    thr, fpr, tpr = roc_curve(labels, probs)
    dump("roc_curve", ["threshold", "fpr", "tpr"], zip(thr, fpr, tpr))
    dump("reliability", ["bin_low", "bin_high", "count", "mean_prob", "frac_tracker"],
         reliability_bins(labels, probs))
    return written


def jsonable(obj):
    """Replace NaN/inf with None and tuples with lists, recursively."""
    if isinstance(obj, float):
        return None if math.isnan(obj) or math.isinf(obj) else obj
    if isinstance(obj, dict):
        return {k if isinstance(k, str) else "|".join(k) if isinstance(k, tuple) else str(k):
                jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return jsonable(obj.item())
    return obj
