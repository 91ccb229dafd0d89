"""Isotonic calibration via pool-adjacent-violators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def pav(values: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Weighted least-squares non-decreasing fit of ``values`` (in given order)."""
    values = np.asarray(values, dtype=np.float64)
    weights = np.ones_like(values) if weights is None else np.asarray(weights, dtype=np.float64)
    means: list[float] = []
    wsum: list[float] = []
    sizes: list[int] = []
    for v, w in zip(values, weights):
        means.append(float(v))
        wsum.append(float(w))
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            w2 = wsum[-2] + wsum[-1]
            m2 = (means[-2] * wsum[-2] + means[-1] * wsum[-1]) / w2
            n2 = sizes[-2] + sizes[-1]
            for lst in (means, wsum, sizes):
                lst.pop()
            means[-1], wsum[-1], sizes[-1] = m2, w2, n2
    return np.repeat(np.asarray(means), sizes)


@dataclass
class IsotonicMapping:
    """Right-continuous step function; inputs outside the fitted range clamp."""

    thresholds: np.ndarray
    values: np.ndarray

    def __call__(self, scores) -> np.ndarray:
        scores = np.asarray(scores, dtype=np.float64)
        pos = np.searchsorted(self.thresholds, scores, side="right") - 1
        return self.values[np.clip(pos, 0, len(self.values) - 1)]

    def to_json(self) -> dict:
        return {"thresholds": self.thresholds.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_json(cls, obj) -> "IsotonicMapping":
        return cls(np.asarray(obj["thresholds"], dtype=np.float64),
                   np.asarray(obj["values"], dtype=np.float64))


def fit_isotonic(scores, labels) -> IsotonicMapping:
    """Pool tied scores, then PAV over the distinct scores in ascending order."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    uniq, inverse = np.unique(scores, return_inverse=True)
    counts = np.bincount(inverse, minlength=len(uniq)).astype(np.float64)
    sums = np.bincount(inverse, weights=labels, minlength=len(uniq))
    fitted = pav(sums / counts, counts)
    return IsotonicMapping(uniq, np.clip(fitted, 0.0, 1.0))
