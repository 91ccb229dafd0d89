"""Classifier training, prediction, isotonic calibration, and feature importance."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..digest import sha256_json
from ..errors import (
    EmptyMatrix,
    InvalidArgument,
    MethodModelMismatch,
    SchemaVersionError,
    SingleClassCalibration,
    SingleClassTraining,
    VocabularyDigestMismatch,
)
from ..features.matrix import BinaryFeatureMatrix
from ..features.vocab import HeaderVocabulary
from .calibration import IsotonicMapping, fit_isotonic
from .estimators import (
    AdaBoost,
    BernoulliNB,
    ConstantModel,
    DecisionTree,
    Forest,
    GaussianNB,
    GradientBoosting,
    LogisticRegression,
)

MODEL_FORMAT = "hdrtrack-model"
MODEL_VERSION = 1

KINDS = {
    "decision_tree": (DecisionTree, {}),
    "random_forest": (Forest, {"bootstrap": True, "tie_break": "first"}),
    "extra_trees": (Forest, {"bootstrap": False, "tie_break": "random"}),
    "bernoulli_nb": (BernoulliNB, {}),
    "gaussian_nb": (GaussianNB, {}),
    "logistic_regression": (LogisticRegression, {}),
    "adaboost": (AdaBoost, {}),
    "grad_boost": (GradientBoosting, {}),
}

TREE_KINDS = {"decision_tree", "random_forest", "extra_trees", "adaboost", "grad_boost"}

# Parameter profiles standing in for the GBM / LightGBM / HistGB / XGBoost rows.
PRESETS = {
    "gbm": ("grad_boost", {"n_estimators": 100, "max_depth": 3, "learning_rate": 0.1,
                           "reg_lambda": 0.0}),
    "lgbm": ("grad_boost", {"n_estimators": 100, "max_depth": 5, "learning_rate": 0.1,
                            "reg_lambda": 0.0}),
    "histgb": ("grad_boost", {"n_estimators": 100, "max_depth": 5, "learning_rate": 0.1,
                              "reg_lambda": 0.0}),
    "xgboost": ("grad_boost", {"n_estimators": 100, "max_depth": 6, "learning_rate": 0.3,
                               "reg_lambda": 1.0}),
}


def default_params(kind: str) -> dict:
    cls, fixed = KINDS[kind]
    return {**cls.defaults, **fixed}


@dataclass
class TrainedClassifier:
    kind: str
    params: dict
    estimator: object
    vocabulary_digest: str
    seed: int
    vocabulary: HeaderVocabulary | None = None
    single_class: bool = False
    info: dict = field(default_factory=dict)


@dataclass
class CalibratedClassifier:
    base: TrainedClassifier
    mapping: IsotonicMapping

    @property
    def kind(self) -> str:
        return self.base.kind

    @property
    def vocabulary_digest(self) -> str:
        return self.base.vocabulary_digest

    @property
    def vocabulary(self):
        return self.base.vocabulary


def resolve_kind(kind: str, params: dict | None = None) -> tuple[str, dict]:
    """Map a kind or preset name to (kind, merged params)."""
    params = dict(params or {})
    if kind in PRESETS:
        base_kind, preset = PRESETS[kind]
        return base_kind, {**preset, **params}
    if kind not in KINDS:
        raise InvalidArgument(f"unknown model kind {kind!r}")
    return kind, params


def train_classifier(kind: str, mat: BinaryFeatureMatrix, params: dict | None = None,
                     seed: int = 0, threads: int = 1) -> TrainedClassifier:
    kind, params = resolve_kind(kind, params)
    if mat.n_rows == 0:
        raise EmptyMatrix("cannot train on an empty matrix")
    cls, fixed = KINDS[kind]
    unknown = set(params) - set(cls.defaults)
    if unknown:
        raise InvalidArgument(f"unknown parameters for {kind}: {sorted(unknown)}")
    full = {**cls.defaults, **fixed, **params}
    y = mat.labels.astype(np.int8)
    classes = np.unique(y)
    if len(classes) < 2:
        warnings.warn(f"training labels contain only class {int(classes[0])}; "
                      "returning a constant predictor", SingleClassTraining, stacklevel=2)
        return TrainedClassifier(kind, full, ConstantModel(float(classes[0])),
                                 mat.vocabulary_digest, seed, mat.vocabulary, True)
    est = cls(**{k: v for k, v in full.items()})
    est.fit(mat.dense(), y, seed=seed, threads=threads)
    info = {}
    if isinstance(est, LogisticRegression):
        info = {"n_iter": est.n_iter, "converged": est.converged, "grad_norm": est.grad_norm}
        if not est.converged:
            warnings.warn(f"logistic regression stopped at max_iter with gradient norm "
                          f"{est.grad_norm:.3g}", RuntimeWarning, stacklevel=2)
    return TrainedClassifier(kind, full, est, mat.vocabulary_digest, seed, mat.vocabulary,
                             False, info)


def _raw_proba(model, X: np.ndarray) -> np.ndarray:
    if isinstance(model, CalibratedClassifier):
        return model.mapping(_raw_proba(model.base, X))
    return np.clip(model.estimator.predict_proba(X), 0.0, 1.0)


def predict_proba(model, mat: BinaryFeatureMatrix) -> np.ndarray:
    mat.expect_vocabulary(model.vocabulary_digest)
    return _raw_proba(model, mat.dense())


def calibrate_isotonic(model: TrainedClassifier, calib: BinaryFeatureMatrix) -> CalibratedClassifier:
    calib.expect_vocabulary(model.vocabulary_digest)
    if len(np.unique(calib.labels)) < 2:
        raise SingleClassCalibration("calibration set must contain both classes")
    scores = _raw_proba(model, calib.dense())
    return CalibratedClassifier(model, fit_isotonic(scores, calib.labels))


# --- importance -------------------------------------------------------------

@dataclass
class ImportanceReport:
    method: str
    metric: str | None
    raw: dict[str, float]
    scores: dict[str, float]

    def top(self, k: int = 10) -> list[tuple[str, float]]:
        return sorted(self.scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]

    def to_json(self) -> dict:
        return {"method": self.method, "metric": self.metric, "raw": self.raw,
                "scores": self.scores, "top10": self.top(10)}


def _names(model, d: int) -> list[str]:
    vocab = model.vocabulary
    if vocab is not None and len(vocab.canonical) == d:
        return list(vocab.canonical)
    return [f"f{j}" for j in range(d)]


def compute_feature_importance(model, mat: BinaryFeatureMatrix, metric: str = "f1",
                               method: str = "permutation", seed: int = 0,
                               repeats: int = 5, threshold: float = 0.5) -> ImportanceReport:
    mat.expect_vocabulary(model.vocabulary_digest)
    d = mat.dim
    base_model = model.base if isinstance(model, CalibratedClassifier) else model
    if method == "impurity":
        if base_model.kind not in TREE_KINDS or base_model.single_class:
            raise MethodModelMismatch(f"impurity importance needs a tree model, not {base_model.kind}")
        raw = base_model.estimator.impurity_importance(d)
    elif method == "permutation":
        from ..evaluation.metrics import metric_value, LOWER_IS_BETTER

        X = mat.dense()
        y = mat.labels
        base = metric_value(metric, y, _raw_proba(model, X), threshold)
        sign = -1.0 if metric in LOWER_IS_BETTER else 1.0
        raw = np.zeros(d)
        col_sums = X.sum(axis=0)
        for j in range(d):
            if col_sums[j] == 0 or col_sums[j] == X.shape[0]:
                continue  # permuting a constant column is the identity
            rng = np.random.default_rng([int(seed) & (2**64 - 1), j])
            original = X[:, j].copy()
            deltas = []
            for _ in range(repeats):
                X[:, j] = original[rng.permutation(len(original))]
                score = metric_value(metric, y, _raw_proba(model, X), threshold)
                deltas.append(sign * (base - score))
            X[:, j] = original
            raw[j] = float(np.mean(deltas))
        raw = np.maximum(raw, 0.0)
    else:
        raise InvalidArgument(f"unknown importance method {method!r}")
    peak = raw.max() if d else 0.0
    names = _names(base_model, d)
    scaled = raw / peak if peak > 0 else raw
    return ImportanceReport(method, metric if method == "permutation" else None,
                            {n: float(v) for n, v in zip(names, raw)},
                            {n: float(v) for n, v in zip(names, scaled)})


# --- serialization ----------------------------------------------------------

def _classifier_json(m: TrainedClassifier) -> dict:
    return {
        "kind": m.kind,
        "params": m.params,
        "seed": m.seed,
        "single_class": m.single_class,
        "state": m.estimator.to_state(),
        "info": m.info,
    }


def model_to_json(model) -> dict:
    base = model.base if isinstance(model, CalibratedClassifier) else model
    body = {
        "format": MODEL_FORMAT,
        "v": MODEL_VERSION,
        "vocabulary_digest": base.vocabulary_digest,
        "vocabulary": base.vocabulary.to_json() if base.vocabulary is not None else None,
        "model": _classifier_json(base),
        "calibration": model.mapping.to_json() if isinstance(model, CalibratedClassifier) else None,
    }
    body["state_digest"] = sha256_json({k: body[k] for k in ("model", "calibration")})
    return body


def model_from_json(obj: dict):
    if obj.get("format") != MODEL_FORMAT:
        raise SchemaVersionError("not a model file")
    if obj.get("v") != MODEL_VERSION:
        raise SchemaVersionError(f"unsupported model version {obj.get('v')!r}")
    if sha256_json({k: obj[k] for k in ("model", "calibration")}) != obj.get("state_digest"):
        raise VocabularyDigestMismatch("model state fails its digest")
    vocab = HeaderVocabulary.from_json(obj["vocabulary"]) if obj.get("vocabulary") else None
    if vocab is not None and vocab.digest != obj["vocabulary_digest"]:
        raise VocabularyDigestMismatch("embedded vocabulary fails its digest")
    m = obj["model"]
    cls = KINDS[m["kind"]][0]
    if m["single_class"]:
        est = ConstantModel.from_state(m["state"])
    else:
        est = cls.from_state(m["state"], m["params"])
    base = TrainedClassifier(m["kind"], m["params"], est, obj["vocabulary_digest"], m["seed"],
                             vocab, m["single_class"], m.get("info", {}))
    if obj.get("calibration"):
        return CalibratedClassifier(base, IsotonicMapping.from_json(obj["calibration"]))
    return base


def save_model(model, path, extra: dict | None = None) -> None:
    body = model_to_json(model)
    if extra:
        body.update(extra)
    Path(path).write_text(json.dumps(body, sort_keys=True, separators=(",", ":")) + "\n",
                          encoding="utf-8")


def load_model(path):
    return model_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


__all__ = [
    "CalibratedClassifier", "ImportanceReport", "IsotonicMapping", "KINDS", "PRESETS",
    "TrainedClassifier", "calibrate_isotonic", "compute_feature_importance",
    "default_params", "fit_isotonic", "load_model", "predict_proba", "resolve_kind",
    "save_model", "train_classifier",
]
