"""Stratified train/calibration/test splitting and stratified k-fold assignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientClassCount, InvalidFractions, UnlabeledDataset
from ..ingest import Dataset

SPLIT_NAMES = ("train", "calib", "test")


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.70, 0.10, 0.20)
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        f = tuple(float(x) for x in self.fractions)
        if len(f) != 3:
            raise InvalidFractions("expected three fractions (train, calibration, test)")
        if any(not 0.0 <= x < 1.0 for x in f) or f[0] <= 0.0:
            raise InvalidFractions(f"fractions must lie in [0, 1) with train > 0: {f}")
        if abs(sum(f) - 1.0) > 1e-9:
            raise InvalidFractions(f"fractions must sum to 1, got {sum(f)!r}")
        object.__setattr__(self, "fractions", f)

    def to_json(self) -> dict:
        return {"fractions": list(self.fractions), "seed": self.seed,
                "stratified": self.stratified}


def _allocate(n: int, fractions) -> list[int]:
    """Largest-remainder apportionment of n items."""
    raw = [n * f for f in fractions]
    counts = [int(np.floor(x)) for x in raw]
    rest = n - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:rest]:
        counts[i] += 1
    return counts


def split_indices(labels: np.ndarray, spec: SplitSpec) -> list[np.ndarray]:
    """Return three sorted index arrays forming a partition of range(len(labels))."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(spec.seed)
    n_parts = sum(1 for f in spec.fractions if f > 0)
    groups = [np.flatnonzero(labels == c) for c in (0, 1)] if spec.stratified \
        else [np.arange(len(labels))]
    parts = [[] for _ in range(3)]
    for idx in groups:
        if spec.stratified and 0 < len(idx) < n_parts:
            raise InsufficientClassCount(
                f"class has {len(idx)} records but {n_parts} splits were requested")
        perm = idx[rng.permutation(len(idx))]
        start = 0
        for p, cnt in enumerate(_allocate(len(idx), spec.fractions)):
            parts[p].append(perm[start:start + cnt])
            start += cnt
    return [np.sort(np.concatenate(p)) if p else np.array([], dtype=int) for p in parts]


def split_dataset(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    if ds.label_map is None:
        raise UnlabeledDataset("splitting requires labels")
    parts = split_indices(ds.label_vector(), spec)
    return tuple(ds.subset(p.tolist(), split=name, split_spec=spec.to_json())
                 for name, p in zip(SPLIT_NAMES, parts))


def split_manifest(ds: Dataset, parts: tuple[Dataset, Dataset, Dataset]) -> dict:
    return {name: [r.record_id for r in part.records] for name, part in zip(SPLIT_NAMES, parts)}


def stratified_kfold(labels: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold number per row; per-class fold sizes differ by at most one."""
    labels = np.asarray(labels)
    folds = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for c in (0, 1):
        idx = np.flatnonzero(labels == c)
        if len(idx) < k:
            raise InsufficientClassCount(f"class {c} has {len(idx)} records, fewer than k={k}")
        perm = idx[rng.permutation(len(idx))]
        # rotate the start so fold sizes stay balanced across classes
        folds[perm] = (np.arange(len(perm)) + offset) % k
        offset = (offset + len(perm)) % k
    return folds
