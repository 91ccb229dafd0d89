"""Synthetic fixtures with planted header signals, for tests and demos."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .features.matrix import BinaryFeatureMatrix
from .ingest import NON_TRACKER, TRACKER, Dataset, Direction, HttpMessageRecord, Provenance, records_digest


@dataclass
class PlantedSample:
    X: np.ndarray
    y_true: np.ndarray
    y_observed: np.ndarray


def planted_sample(n: int, d: int = 300, n_informative: int = 12, prevalence: float = 0.3,
                   p_tracker: float = 0.75, p_other: float = 0.10, label_noise: float = 0.0,
                   noise_rate: tuple[float, float] = (0.02, 0.3), lookalike: float = 0.012,
                   seed: int = 0) -> PlantedSample:
    """Columns 0..n_informative-1 appear with rate ``p_tracker`` in trackers and
    ``p_other`` otherwise; the remaining columns are label-independent noise.

    A ``lookalike`` fraction of non-trackers draws its informative columns at the
    tracker rate (first-party analytics, CDN beacons), so no classifier can push
    the false-positive rate below roughly that fraction.  ``label_noise`` flips
    that fraction of observed labels.
    """
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < prevalence).astype(np.int8)
    mimic = (y == 0) & (rng.random(n) < lookalike)
    X = np.zeros((n, d), dtype=np.uint8)
    rate = np.where(((y == 1) | mimic)[:, None], p_tracker, p_other)
    X[:, :n_informative] = rng.random((n, n_informative)) < rate
    noise_rates = rng.uniform(*noise_rate, size=d - n_informative)
    X[:, n_informative:] = rng.random((n, d - n_informative)) < noise_rates
    flip = rng.random(n) < label_noise
    return PlantedSample(X, y, np.where(flip, 1 - y, y).astype(np.int8))


def as_matrix(X: np.ndarray, y: np.ndarray, vocab_digest: str = "synthetic") -> BinaryFeatureMatrix:
    return BinaryFeatureMatrix(sp.csr_matrix(X), y, vocab_digest)


def synthetic_dataset(n: int = 400, n_headers: int = 30, n_informative: int = 4,
                      prevalence: float = 0.3, seed: int = 0, browser_tag: str = "synthetic",
                      direction: Direction = Direction.RESPONSE, labeled: bool = True,
                      id_offset: int = 0) -> Dataset:
    """Records whose header names follow the planted model; hostnames track the label."""
    s = planted_sample(n, n_headers, n_informative, prevalence, 0.7, 0.12, 0.0, lookalike=0.0, seed=seed)
    rng = np.random.default_rng(seed + 1)
    records, labels = [], {}
    for i in range(n):
        tracker = bool(s.y_true[i])
        host = f"t{rng.integers(20)}.track.example" if tracker else f"s{rng.integers(50)}.site.example"
        headers = tuple((f"x-h{j:03d}", str(int(rng.integers(4))))
                        for j in np.flatnonzero(s.X[i]))
        rid = id_offset + i
        records.append(HttpMessageRecord(rid, direction, host, f"https://{host}/r/{i}", headers,
                                         browser_tag, 1_660_000_000_000 + i))
        labels[rid] = TRACKER if tracker else NON_TRACKER
    recs = tuple(records)
    prov = Provenance(("synthetic",), browser_tag, None, records_digest(recs), {"seed": seed})
    return Dataset(recs, prov, labels if labeled else None)
