import math
import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from hdrtrack.errors import (
    EmptyMatrix,
    InvalidArgument,
    MethodModelMismatch,
    SchemaVersionError,
    SingleClassCalibration,
    SingleClassTraining,
    VocabularyDigestMismatch,
)
from hdrtrack.evaluation.metrics import log_loss
from hdrtrack.features import BinaryFeatureMatrix, binarize, build_vocabulary
from hdrtrack.models import (
    KINDS,
    PRESETS,
    calibrate_isotonic,
    compute_feature_importance,
    fit_isotonic,
    load_model,
    model_from_json,
    model_to_json,
    predict_proba,
    save_model,
    train_classifier,
)
from hdrtrack.models.calibration import pav
from hdrtrack.models.estimators import logistic_objective
from hdrtrack.models.tree import grow_classification_tree
from hdrtrack.synthetic import as_matrix, planted_sample, synthetic_dataset


def _mat(X, y, digest="v"):
    return BinaryFeatureMatrix(sp.csr_matrix(np.asarray(X, dtype=np.uint8)), y, digest)


@pytest.fixture(scope="module")
def small():
    s = planted_sample(600, d=30, n_informative=4, seed=3)
    return as_matrix(s.X, s.y_true)


FAST = {"random_forest": {"n_estimators": 15}, "extra_trees": {"n_estimators": 15},
        "adaboost": {"n_estimators": 20}, "grad_boost": {"n_estimators": 20, "max_depth": 3}}


# --- training contracts ----------------------------------------------------------------

@pytest.mark.parametrize("kind", sorted(KINDS))
def test_every_kind_learns_planted_signal(kind, small):
    model = train_classifier(kind, small, FAST.get(kind), seed=1)
    p = predict_proba(model, small)
    assert p.shape == (small.n_rows,)
    assert np.all((p >= 0) & (p <= 1))
    acc = np.mean((p >= 0.5) == small.labels)
    assert acc > 0.8, kind


@pytest.mark.parametrize("kind", sorted(KINDS))
def test_serialization_roundtrip(kind, small, tmp_path):
    model = train_classifier(kind, small, FAST.get(kind), seed=2)
    path = tmp_path / "m.json"
    save_model(model, path)
    back = load_model(path)
    assert np.array_equal(predict_proba(back, small), predict_proba(model, small))
    save_model(back, tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


@pytest.mark.parametrize("kind", ["random_forest", "extra_trees"])
def test_threads_do_not_change_forests(kind, small):
    a = train_classifier(kind, small, FAST[kind], seed=5, threads=1)
    b = train_classifier(kind, small, FAST[kind], seed=5, threads=4)
    assert model_to_json(a) == model_to_json(b)


def test_seed_changes_forest(small):
    a = train_classifier("random_forest", small, FAST["random_forest"], seed=5)
    b = train_classifier("random_forest", small, FAST["random_forest"], seed=6)
    assert model_to_json(a) != model_to_json(b)


def test_single_class_training_gives_constant_model():
    m = _mat([[1, 0], [0, 1]], [1, 1])
    with pytest.warns(SingleClassTraining):
        model = train_classifier("random_forest", m)
    assert model.single_class
    assert np.all(predict_proba(model, m) == 1.0)
    back = model_from_json(model_to_json(model))
    assert back.single_class and np.all(predict_proba(back, m) == 1.0)


def test_training_errors(small):
    empty = BinaryFeatureMatrix(sp.csr_matrix((0, 3), dtype=np.uint8), np.zeros(0), "v")
    with pytest.raises(EmptyMatrix):
        train_classifier("decision_tree", empty)
    with pytest.raises(InvalidArgument):
        train_classifier("decision_tree", small, {"n_estimators": 3})
    with pytest.raises(InvalidArgument):
        train_classifier("svm", small)


def test_presets_resolve_to_boosting(small):
    for name in PRESETS:
        model = train_classifier(name, small, {"n_estimators": 5})
        assert model.kind == "grad_boost"


def test_predict_rejects_other_vocabulary(small):
    model = train_classifier("bernoulli_nb", small)
    other = BinaryFeatureMatrix(small.rows, small.labels, "different")
    with pytest.raises(VocabularyDigestMismatch):
        predict_proba(model, other)


def test_tampered_model_file_is_rejected(small):
    body = model_to_json(train_classifier("bernoulli_nb", small))
    body["model"]["params"]["alpha"] = 2.0
    with pytest.raises(VocabularyDigestMismatch):
        model_from_json(body)
    with pytest.raises(SchemaVersionError):
        model_from_json({**body, "v": 99})


def test_model_embeds_vocabulary():
    ds = synthetic_dataset(200, seed=4)
    vocab = build_vocabulary(ds)
    model = train_classifier("bernoulli_nb", binarize(ds, vocab))
    back = model_from_json(model_to_json(model))
    assert back.vocabulary.digest == vocab.digest == back.vocabulary_digest


# --- model-specific oracles ---------------------------------------------------------------

def test_bernoulli_nb_hand_value():
    # T rows: (1,0),(1,0); NT rows: (0,0),(1,1); alpha = 1
    # P(x0|T)=3/4, P(x1|T)=1/4, P(x0|NT)=1/2, P(x1|NT)=1/2, equal priors
    # x=(1,0): T -> 3/4*3/4 = 9/16, NT -> 1/2*1/2 = 1/4, posterior 9/13
    m = _mat([[1, 0], [1, 0], [0, 0], [1, 1]], [1, 1, 0, 0])
    model = train_classifier("bernoulli_nb", m)
    p = predict_proba(model, _mat([[1, 0]], [1]))
    assert p[0] == pytest.approx(9 / 13, abs=1e-12)


def test_single_tree_forest_equals_decision_tree(small):
    d = small.dim
    rf = train_classifier("random_forest", small,
                          {"n_estimators": 1, "bootstrap": False, "max_features": d}, seed=9)
    dt = train_classifier("decision_tree", small, seed=9)
    assert np.array_equal(predict_proba(rf, small), predict_proba(dt, small))
    assert model_to_json(rf)["model"]["state"]["trees"][0] == \
        model_to_json(dt)["model"]["state"]["tree"]


def _gini_oracle(y):
    if len(y) == 0:
        return 0.0
    p = sum(y) / len(y)
    return 1.0 - p * p - (1 - p) * (1 - p)


def test_root_split_matches_exhaustive_search():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(4, 65))
        d = int(rng.integers(1, 13))
        X = (rng.random((n, d)) < rng.uniform(0.1, 0.9)).astype(np.uint8)
        y = (rng.random(n) < 0.4).astype(np.int8)
        if y.min() == y.max():
            continue
        best_f, best_gain = None, 0.0
        parent = _gini_oracle(list(y)) * n
        for j in range(d):
            left = [int(y[i]) for i in range(n) if X[i, j] == 0]
            right = [int(y[i]) for i in range(n) if X[i, j] == 1]
            if not left or not right:
                continue
            gain = parent - len(left) * _gini_oracle(left) - len(right) * _gini_oracle(right)
            if best_f is None or gain > best_gain + 1e-9:
                best_f, best_gain = j, gain
        tree = grow_classification_tree(X, y, max_depth=1)
        if best_f is None:
            assert tree.n_nodes == 1
            continue
        assert tree.feature[0] == best_f
        assert tree.gain[0] == pytest.approx(best_gain, abs=1e-9)


def test_tree_fits_training_data_when_separable():
    rng = np.random.default_rng(1)
    X = (rng.random((64, 12)) < 0.5).astype(np.uint8)
    X = np.unique(X, axis=0)
    y = (rng.random(len(X)) < 0.5).astype(np.int8)
    tree = grow_classification_tree(X, y)
    assert np.array_equal(tree.predict(X), y.astype(float))


def test_logistic_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    X = (rng.random((80, 7)) < 0.4).astype(np.float64)
    y = (rng.random(80) < 0.3).astype(np.float64)
    w = rng.normal(size=7)
    b = 0.3
    _, gw, gb = logistic_objective(w, b, X, y, 1e-4)
    h = 1e-6
    for j in range(7):
        e = np.zeros(7)
        e[j] = h
        num = (logistic_objective(w + e, b, X, y, 1e-4)[0]
               - logistic_objective(w - e, b, X, y, 1e-4)[0]) / (2 * h)
        assert abs(num - gw[j]) <= 1e-4 * max(abs(gw[j]), 1e-8)
    num_b = (logistic_objective(w, b + h, X, y, 1e-4)[0]
             - logistic_objective(w, b - h, X, y, 1e-4)[0]) / (2 * h)
    assert abs(num_b - gb) <= 1e-4 * max(abs(gb), 1e-8)


def test_logistic_converges(small):
    model = train_classifier("logistic_regression", small)
    assert model.info["converged"]
    assert model.info["grad_norm"] < 1e-6 * 10


def test_gradient_boosting_training_loss_is_monotone(small):
    model = train_classifier("grad_boost", small, {"n_estimators": 40, "learning_rate": 0.8})
    losses = model.estimator.train_loss
    assert len(losses) >= 2
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_adaboost_probabilities_are_ordered_by_margin(small):
    model = train_classifier("adaboost", small, {"n_estimators": 20})
    X = small.dense()
    p = predict_proba(model, small)
    margin = model.estimator.margin(X)
    order = np.argsort(margin, kind="stable")
    assert np.all(np.diff(p[order]) >= -1e-12)


# --- calibration -----------------------------------------------------------------------------

def test_pav_hand_fixture():
    mapping = fit_isotonic([0.1, 0.35, 0.4, 0.8], [0, 1, 0, 1])
    assert mapping([0.1, 0.35, 0.4, 0.8]).tolist() == [0.0, 0.5, 0.5, 1.0]


def _isotonic_oracle(v, w):
    # min-max formula for weighted isotonic regression
    n = len(v)
    out = np.empty(n)
    for i in range(n):
        best = -np.inf
        for j in range(i + 1):
            worst = np.inf
            for k in range(i, n):
                m = np.dot(v[j:k + 1], w[j:k + 1]) / w[j:k + 1].sum()
                worst = min(worst, m)
            best = max(best, worst)
        out[i] = best
    return out


def test_pav_matches_minmax_formula():
    rng = np.random.default_rng(5)
    for _ in range(100):
        n = int(rng.integers(1, 15))
        v = rng.random(n)
        w = rng.uniform(0.5, 3, n)
        assert np.allclose(pav(v, w), _isotonic_oracle(v, w), atol=1e-12)


def test_isotonic_pools_ties_and_clamps():
    m = fit_isotonic([0.2, 0.2, 0.2, 0.6], [1, 0, 0, 1])
    assert m([0.2])[0] == pytest.approx(1 / 3)
    assert m([0.0])[0] == pytest.approx(1 / 3)
    assert m([0.99])[0] == 1.0
    assert m([0.4])[0] == pytest.approx(1 / 3)


def test_calibration_never_raises_calibration_set_log_loss():
    rng = np.random.default_rng(6)
    for _ in range(100):
        n = int(rng.integers(5, 200))
        s = rng.random(n)
        y = (rng.random(n) < rng.random(n) ** 2).astype(int)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        cal = fit_isotonic(s, y)(s)
        assert log_loss(y, cal) <= log_loss(y, s) + 1e-12


def test_calibrated_model_roundtrip_and_errors(small, tmp_path):
    model = train_classifier("bernoulli_nb", small)
    cal = calibrate_isotonic(model, small)
    p = predict_proba(cal, small)
    assert np.all(np.diff(p[np.argsort(predict_proba(model, small), kind="stable")]) >= 0)
    save_model(cal, tmp_path / "c.json")
    assert np.array_equal(predict_proba(load_model(tmp_path / "c.json"), small), p)
    one = small.take(np.flatnonzero(small.labels == 1))
    with pytest.raises(SingleClassCalibration):
        calibrate_isotonic(model, one)


# --- importance --------------------------------------------------------------------------------

def _col0_dataset():
    rng = np.random.default_rng(8)
    X = (rng.random((400, 10)) < 0.5).astype(np.uint8)
    y = X[:, 0].astype(np.int8)
    return _mat(X, y)


@pytest.mark.parametrize("kind", ["decision_tree", "random_forest", "extra_trees", "grad_boost"])
def test_impurity_importance_concentrates_on_signal(kind):
    m = _col0_dataset()
    model = train_classifier(kind, m, FAST.get(kind), seed=0)
    rep = compute_feature_importance(model, m, method="impurity")
    total = sum(rep.raw.values())
    assert rep.raw["f0"] / total >= 0.9
    assert rep.top(1)[0][0] == "f0"


def test_permutation_importance_ranks_signal_first():
    m = _col0_dataset()
    model = train_classifier("logistic_regression", m)
    rep = compute_feature_importance(model, m, method="permutation", metric="f1", seed=1)
    assert rep.top(1)[0] == ("f0", 1.0)
    assert all(v <= 0.05 for k, v in rep.scores.items() if k != "f0")
    again = compute_feature_importance(model, m, method="permutation", metric="f1", seed=1)
    assert again.raw == rep.raw
    ll = compute_feature_importance(model, m, method="permutation", metric="log_loss", seed=1)
    assert ll.top(1)[0][0] == "f0"


def test_impurity_importance_needs_tree_model():
    m = _col0_dataset()
    model = train_classifier("bernoulli_nb", m)
    with pytest.raises(MethodModelMismatch):
        compute_feature_importance(model, m, method="impurity")
    with pytest.raises(InvalidArgument):
        compute_feature_importance(model, m, method="shap")


def test_logistic_objective_value_matches_direct_formula():
    rng = np.random.default_rng(2)
    X = (rng.random((30, 4)) < 0.5).astype(float)
    y = (rng.random(30) < 0.5).astype(float)
    w, b = rng.normal(size=4), -0.2
    z = X @ w + b
    direct = np.mean([math.log1p(math.exp(-zi)) if yi else math.log1p(math.exp(zi))
                      for zi, yi in zip(z, y)]) + 0.5 * 1e-4 * float(w @ w)
    assert logistic_objective(w, b, X, y, 1e-4)[0] == pytest.approx(direct, rel=1e-12)
