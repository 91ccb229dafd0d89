"""Repeated stratified cross-validation and cross-dataset evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import InvalidArgument, UnlabeledDataset, VocabularyDigestMismatch
from ..features.matrix import binarize
from ..features.split import stratified_kfold
from ..features.vocab import VocabParams, build_vocabulary
from ..ingest import Dataset
from ..models import CalibratedClassifier, predict_proba, train_classifier
from .metrics import SCALAR_METRICS, MetricsReport, compute_metrics


@dataclass
class CvResult:
    folds: list[MetricsReport]
    repeats: int
    k: int
    fold_manifest: list[list[list[int]]] = field(default_factory=list)
    vocab_digests: list[str] = field(default_factory=list)

    def aggregate(self) -> dict[str, dict[str, float]]:
        out = {}
        for m in SCALAR_METRICS:
            vals = np.array([getattr(r, m) for r in self.folds], dtype=np.float64)
            vals = vals[~np.isnan(vals)]
            out[m] = {"mean": float(vals.mean()) if len(vals) else float("nan"),
                      "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0}
        return out

    def to_json(self) -> dict:
        return {"repeats": self.repeats, "k": self.k,
                "folds": [r.to_json() for r in self.folds],
                "aggregate": self.aggregate(),
                "fold_manifest": self.fold_manifest,
                "vocab_digests": self.vocab_digests}


def fold_assignments(labels: np.ndarray, repeats: int, k: int, seed: int) -> list[np.ndarray]:
    return [stratified_kfold(labels, k, np.random.default_rng([int(seed) & (2**64 - 1), rep]))
            for rep in range(repeats)]


def repeated_stratified_cv(kind: str, ds: Dataset, model_params: dict | None = None,
                           vocab_params: VocabParams | None = None, repeats: int = 5,
                           k: int = 5, seed: int = 0, threshold: float = 0.5,
                           threads: int = 1) -> CvResult:
    """r x k folds; each fold rebuilds vocabulary and matrices from its own training part."""
    if ds.label_map is None:
        raise UnlabeledDataset("cross-validation needs labels")
    if k < 2 or repeats < 1:
        raise InvalidArgument("need k >= 2 and repeats >= 1")
    y = ds.label_vector()
    reports, manifest, digests = [], [], []
    for rep, folds in enumerate(fold_assignments(y, repeats, k, seed)):
        manifest.append([[ds.records[i].record_id for i in np.flatnonzero(folds == f)]
                         for f in range(k)])
        for f in range(k):
            train = ds.subset(np.flatnonzero(folds != f).tolist())
            test = ds.subset(np.flatnonzero(folds == f).tolist())
            vocab = build_vocabulary(train, vocab_params)
            digests.append(vocab.digest)
            m_train, m_test = binarize(train, vocab), binarize(test, vocab)
            model = train_classifier(kind, m_train, model_params, seed=seed + rep * k + f,
                                     threads=threads)
            rep_ = compute_metrics(m_test.labels, predict_proba(model, m_test), threshold,
                                   seed=seed)
            rep_.tag = f"repeat{rep}/fold{f}"
            reports.append(rep_)
    return CvResult(reports, repeats, k, manifest, digests)


def cross_evaluate(model, test_datasets: Mapping[str, Dataset], threshold: float = 0.5,
                   with_ci: bool = False, seed: int = 0, threads: int = 1) -> dict[str, MetricsReport]:
    """Score each dataset after binarizing it with the model's frozen vocabulary."""
    vocab = model.vocabulary
    if vocab is None:
        raise InvalidArgument("model carries no vocabulary; cannot binarize raw datasets")
    if vocab.digest != model.vocabulary_digest:
        raise VocabularyDigestMismatch("model vocabulary fails its digest")
    out = {}
    for tag, ds in test_datasets.items():
        mat = binarize(ds, vocab, expected_digest=model.vocabulary_digest)
        probs = predict_proba(model, mat)
        rep = compute_metrics(mat.labels, probs, threshold, with_ci=with_ci, seed=seed,
                              threads=threads)
        rep.tag = tag
        rep.extra = {"vocabulary_digest": mat.vocabulary_digest,
                     "calibrated": isinstance(model, CalibratedClassifier),
                     "browser_tag": ds.provenance.browser_tag,
                     "content_digest": ds.provenance.content_digest,
                     "zero_rows": int(np.sum(np.diff(mat.rows.indptr) == 0))}
        out[tag] = rep
    return out
