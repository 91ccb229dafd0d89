"""Sparse binary presence matrices and their line-oriented file format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from ..digest import canonical_json
from ..errors import ParseError, SchemaVersionError, UnlabeledDataset, VocabularyDigestMismatch
from ..ingest import Dataset
from .vocab import HeaderVocabulary

MATRIX_VERSION = 1


@dataclass
class BinaryFeatureMatrix:
    """n x d presence matrix (CSR, sorted column indices) with aligned labels."""

    rows: sp.csr_matrix
    labels: np.ndarray
    vocabulary_digest: str
    vocabulary: HeaderVocabulary | None = None

    def __post_init__(self):
        self.rows = sp.csr_matrix(self.rows, dtype=np.uint8)
        self.rows.sort_indices()
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.labels.shape != (self.rows.shape[0],):
            raise ValueError("labels must align with rows")

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def dense(self, dtype=np.uint8) -> np.ndarray:
        return self.rows.toarray().astype(dtype, copy=False)

    def row_indices(self, i: int) -> np.ndarray:
        s, e = self.rows.indptr[i], self.rows.indptr[i + 1]
        return self.rows.indices[s:e]

    def density(self) -> float:
        if self.n_rows == 0 or self.dim == 0:
            return 0.0
        return self.rows.nnz / (self.n_rows * self.dim)

    def take(self, idx) -> "BinaryFeatureMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        return BinaryFeatureMatrix(self.rows[idx], self.labels[idx], self.vocabulary_digest,
                                   self.vocabulary)

    def expect_vocabulary(self, digest: str) -> None:
        if digest != self.vocabulary_digest:
            raise VocabularyDigestMismatch(
                f"matrix vocabulary {self.vocabulary_digest[:12]} != expected {digest[:12]}")


def binarize(ds: Dataset, vocab: HeaderVocabulary,
             expected_digest: str | None = None) -> BinaryFeatureMatrix:
    """Presence matrix over the vocabulary; unseen headers are ignored."""
    digest = vocab.digest
    if expected_digest is not None and expected_digest != digest:
        raise VocabularyDigestMismatch(
            f"vocabulary {digest[:12]} does not match manifest {expected_digest[:12]}")
    if ds.label_map is None:
        raise UnlabeledDataset("binarization needs labels")
    cols = vocab.column_of()
    indptr = [0]
    indices: list[int] = []
    for r in ds.records:
        hit = sorted({cols[name] for name, _ in r.headers if name in cols})
        indices.extend(hit)
        indptr.append(len(indices))
    data = np.ones(len(indices), dtype=np.uint8)
    mat = sp.csr_matrix((data, np.asarray(indices, dtype=np.int32), np.asarray(indptr)),
                        shape=(len(ds.records), vocab.dim))
    return BinaryFeatureMatrix(mat, ds.label_vector(), digest, vocab)


def matrix_to_text(mat: BinaryFeatureMatrix, extra: dict | None = None) -> str:
    header = {"v": MATRIX_VERSION, "n": mat.n_rows, "d": mat.dim,
              "vocab_digest": mat.vocabulary_digest}
    if mat.vocabulary is not None:
        header["vocab"] = mat.vocabulary.to_json()
    if extra:
        header.update(extra)
    lines = [canonical_json(header)]
    for i in range(mat.n_rows):
        parts = [str(int(mat.labels[i]))]
        parts.extend(str(int(j)) for j in mat.row_indices(i))
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def save_matrix(mat: BinaryFeatureMatrix, path, extra: dict | None = None) -> None:
    Path(path).write_bytes(matrix_to_text(mat, extra).encode("utf-8"))


def load_matrix(path) -> BinaryFeatureMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: bad matrix header") from exc
        if header.get("v") != MATRIX_VERSION:
            raise SchemaVersionError(f"unsupported matrix version {header.get('v')!r}")
        n, d = int(header["n"]), int(header["d"])
        labels = np.empty(n, dtype=np.int8)
        indptr = [0]
        indices: list[int] = []
        i = 0
        for line in fh:
            if not line.strip():
                continue
            if i >= n:
                raise ParseError(f"{path}: more rows than declared")
            parts = line.split()
            labels[i] = int(parts[0])
            cols = [int(p) for p in parts[1:]]
            if any(c >= d or c < 0 for c in cols) or any(b <= a for a, b in zip(cols, cols[1:])):
                raise ParseError(f"{path}: row {i} has invalid column indices")
            indices.extend(cols)
            indptr.append(len(indices))
            i += 1
        if i != n:
            raise ParseError(f"{path}: declared {n} rows, read {i}")
    vocab = HeaderVocabulary.from_json(header["vocab"]) if "vocab" in header else None
    if vocab is not None and vocab.digest != header["vocab_digest"]:
        raise VocabularyDigestMismatch(f"{path}: embedded vocabulary fails its digest")
    mat = sp.csr_matrix((np.ones(len(indices), dtype=np.uint8),
                         np.asarray(indices, dtype=np.int32), np.asarray(indptr)), shape=(n, d))
    return BinaryFeatureMatrix(mat, labels, header["vocab_digest"], vocab)
