"""Percentile bootstrap confidence intervals over (label, probability) pairs."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import EmptyInput
from .metrics import CLASS_CONDITIONAL, SCALAR_METRICS, _check, all_metric_values

N_RESAMPLES = 599


@dataclass
class BootstrapResult:
    intervals: dict[str, tuple[float, float]]
    draws: dict[str, np.ndarray]
    skipped: dict[str, int]


def bootstrap_ci(labels, probs, metrics=SCALAR_METRICS, n_resamples: int = N_RESAMPLES,
                 seed: int = 0, threshold: float = 0.5, threads: int = 1,
                 level: float = 0.95) -> BootstrapResult:
    y, p = _check(labels, probs)
    if len(y) < 2:
        raise EmptyInput("bootstrap needs at least two rows")
    n = len(y)
    metrics = tuple(metrics)

    def draw(b: int):
        rng = np.random.default_rng([int(seed) & (2**64 - 1), b])
        idx = rng.integers(0, n, n)
        yb = y[idx]
        vals = all_metric_values(yb, p[idx], threshold)
        one_class = yb.min() == yb.max()
        return {m: (None if one_class and m in CLASS_CONDITIONAL else vals[m]) for m in metrics}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(draw, range(n_resamples)))
    else:
        results = [draw(b) for b in range(n_resamples)]

    alpha = (1.0 - level) / 2.0
    intervals, draws, skipped = {}, {}, {}
    for m in metrics:
        vals = np.array([r[m] for r in results if r[m] is not None and not math.isnan(r[m])])
        draws[m] = vals
        skipped[m] = n_resamples - len(vals)
        if len(vals):
            lo, hi = np.percentile(vals, [100 * alpha, 100 * (1 - alpha)])
            intervals[m] = (float(lo), float(hi))
        else:
            intervals[m] = (float("nan"), float("nan"))
    return BootstrapResult(intervals, draws, skipped)
