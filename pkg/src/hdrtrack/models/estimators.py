"""Fitted-state classes for each supported model family.

Each estimator exposes ``fit(X, y)``, ``predict_proba(X) -> P(T)``,
``to_state()`` and ``from_state()``. Inputs are dense 0/1 matrices.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.special import expit, logsumexp

from .tree import Tree, grow_classification_tree, grow_regression_tree

EPS = 1e-15


def tree_rng(seed: int, index: int) -> np.random.Generator:
    """Per-tree stream so serial and threaded fits agree."""
    return np.random.default_rng([int(seed) & (2**64 - 1), index])


def _resolve_max_features(spec, d: int) -> int | None:
    if spec is None:
        return None
    if spec == "sqrt":
        return max(1, int(math.sqrt(d)))
    if spec == "log2":
        return max(1, int(math.log2(d))) if d > 1 else 1
    if isinstance(spec, float):
        return max(1, int(spec * d))
    return max(1, min(int(spec), d))


def _map_trees(fn, n: int, threads: int):
    if threads and threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, range(n)))
    return [fn(i) for i in range(n)]


def mean_log_loss(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, EPS, 1 - EPS)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


class ConstantModel:
    kind_state = "constant"

    def __init__(self, p: float = 0.5):
        self.p = float(p)

    def predict_proba(self, X):
        return np.full(X.shape[0], self.p)

    def to_state(self):
        return {"p": self.p}

    @classmethod
    def from_state(cls, st):
        return cls(st["p"])


class DecisionTree:
    defaults = {"max_depth": None, "min_samples_leaf": 1}

    def __init__(self, **params):
        self.params = {**self.defaults, **params}
        self.tree: Tree | None = None

    def fit(self, X, y, seed=0, threads=1):
        self.tree = grow_classification_tree(
            X, y, max_depth=self.params["max_depth"],
            min_samples_leaf=self.params["min_samples_leaf"], rng=tree_rng(seed, 0))
        return self

    def predict_proba(self, X):
        return self.tree.predict(X)

    def impurity_importance(self, d):
        g = self.tree.feature_gains(d)
        return g / g.sum() if g.sum() > 0 else g

    def to_state(self):
        return {"tree": self.tree.to_json()}

    @classmethod
    def from_state(cls, st, params):
        m = cls(**params)
        m.tree = Tree.from_json(st["tree"])
        return m


class Forest:
    """Random forest (bootstrap, first-best ties) or extra trees (no bootstrap, random ties)."""

    defaults = {"n_estimators": 100, "max_features": "sqrt", "bootstrap": True,
                "max_depth": None, "min_samples_leaf": 1, "tie_break": "first"}

    def __init__(self, **params):
        self.params = {**self.defaults, **params}
        self.trees: list[Tree] = []

    def fit(self, X, y, seed=0, threads=1):
        n, d = X.shape
        p = self.params
        k = _resolve_max_features(p["max_features"], d)

        def one(i):
            rng = tree_rng(seed, i)
            w = None
            if p["bootstrap"]:
                w = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.float64)
            return grow_classification_tree(
                X, y, w, max_depth=p["max_depth"], min_samples_leaf=p["min_samples_leaf"],
                max_features=k, tie_break=p["tie_break"], rng=rng)

        self.trees = _map_trees(one, int(p["n_estimators"]), threads)
        return self

    def predict_proba(self, X):
        acc = np.zeros(X.shape[0])
        for t in self.trees:
            acc += t.predict(X)
        return acc / len(self.trees)

    def impurity_importance(self, d):
        acc = np.zeros(d)
        for t in self.trees:
            g = t.feature_gains(d)
            if g.sum() > 0:
                acc += g / g.sum()
        return acc / acc.sum() if acc.sum() > 0 else acc

    def to_state(self):
        return {"trees": [t.to_json() for t in self.trees]}

    @classmethod
    def from_state(cls, st, params):
        m = cls(**params)
        m.trees = [Tree.from_json(t) for t in st["trees"]]
        return m


class BernoulliNB:
    defaults = {"alpha": 1.0}

    def __init__(self, **params):
        self.params = {**self.defaults, **params}

    def fit(self, X, y, seed=0, threads=1):
        a = float(self.params["alpha"])
        y = np.asarray(y)
        self.class_log_prior = np.zeros(2)
        self.feature_log_prob = np.zeros((2, X.shape[1]))
        self.feature_log_neg = np.zeros((2, X.shape[1]))
        for c in (0, 1):
            rows = y == c
            nc = rows.sum()
            counts = X[rows].sum(axis=0, dtype=np.float64)
            prob = (counts + a) / (nc + 2 * a)
            self.class_log_prior[c] = math.log(nc / len(y))
            self.feature_log_prob[c] = np.log(prob)
            self.feature_log_neg[c] = np.log1p(-prob)
        return self

    def joint_log_likelihood(self, X):
        Xf = X.astype(np.float64, copy=False)
        base = self.feature_log_neg.sum(axis=1) + self.class_log_prior
        return Xf @ (self.feature_log_prob - self.feature_log_neg).T + base

    def predict_proba(self, X):
        jll = self.joint_log_likelihood(X)
        return np.exp(jll[:, 1] - logsumexp(jll, axis=1))

    def to_state(self):
        return {"class_log_prior": self.class_log_prior.tolist(),
                "feature_log_prob": self.feature_log_prob.tolist(),
                "feature_log_neg": self.feature_log_neg.tolist()}

    @classmethod
    def from_state(cls, st, params):
        m = cls(**params)
        m.class_log_prior = np.asarray(st["class_log_prior"])
        m.feature_log_prob = np.asarray(st["feature_log_prob"])
        m.feature_log_neg = np.asarray(st["feature_log_neg"])
        return m


class GaussianNB:
    """Baseline only; features are 0/1 so the Bernoulli model is the natural fit."""

    defaults = {"var_smoothing": 1e-9}

    def __init__(self, **params):
        self.params = {**self.defaults, **params}

    def fit(self, X, y, seed=0, threads=1):
        Xf = X.astype(np.float64)
        y = np.asarray(y)
        eps = self.params["var_smoothing"] * max(float(Xf.var(axis=0).max(initial=0.0)), 0.0)
        self.theta = np.zeros((2, X.shape[1]))
        self.var = np.zeros((2, X.shape[1]))
        self.class_log_prior = np.zeros(2)
        for c in (0, 1):
            rows = Xf[y == c]
            self.theta[c] = rows.mean(axis=0)
            self.var[c] = rows.var(axis=0) + eps
            self.class_log_prior[c] = math.log(len(rows) / len(y))
        # guard against an all-zero variance vector (eps == 0)
        self.var = np.maximum(self.var, 1e-12)
        return self

    def predict_proba(self, X):
        Xf = X.astype(np.float64, copy=False)
        jll = np.empty((X.shape[0], 2))
        for c in (0, 1):
            norm = -0.5 * np.sum(np.log(2.0 * np.pi * self.var[c]))
            jll[:, c] = self.class_log_prior[c] + norm \
                - 0.5 * np.sum((Xf - self.theta[c]) ** 2 / self.var[c], axis=1)
        return np.exp(jll[:, 1] - logsumexp(jll, axis=1))

    def to_state(self):
        return {"theta": self.theta.tolist(), "var": self.var.tolist(),
                "class_log_prior": self.class_log_prior.tolist()}

    @classmethod
    def from_state(cls, st, params):
        m = cls(**params)
        m.theta = np.asarray(st["theta"])
        m.var = np.asarray(st["var"])
        m.class_log_prior = np.asarray(st["class_log_prior"])
        return m


def logistic_objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float):
    """Mean logistic loss + (l2/2)|w|^2 and its gradient (bias unpenalized)."""
    z = X @ w + b
    # log(1 + exp(z)) - y z, stable form
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z)) + 0.5 * l2 * float(w @ w)
    r = (expit(z) - y) / len(y)
    return loss, X.T @ r + l2 * w, float(r.sum())


class LogisticRegression:
    defaults = {"l2": 1e-4, "tol": 1e-6, "max_iter": 10000}

    def __init__(self, **params):
        self.params = {**self.defaults, **params}

    def fit(self, X, y, seed=0, threads=1):
        Xf = X.astype(np.float64)
        y = np.asarray(y, dtype=np.float64)
        lam, tol, max_iter = self.params["l2"], self.params["tol"], int(self.params["max_iter"])
        n, d = Xf.shape
        theta = np.zeros(d + 1)

        def f_grad(th):
            loss, gw, gb = logistic_objective(th[:-1], th[-1], Xf, y, lam)
            return loss, np.append(gw, gb)

        # Lipschitz estimate from power iteration on [X 1]; backtracking fixes underestimates
        v = np.ones(d + 1) / math.sqrt(d + 1)
        for _ in range(30):
            u = Xf @ v[:-1] + v[-1]
            v_new = np.append(Xf.T @ u, u.sum())
            nv = np.linalg.norm(v_new)
            if nv == 0:
                break
            v = v_new / nv
        L = max(nv / (4.0 * n) + lam, 1e-12) if n else 1.0

        x_prev = theta.copy()
        yk = theta.copy()
        t = 1.0
        f_x, g_x = f_grad(theta)
        self.n_iter = 0
        self.converged = False
        for it in range(max_iter):
            if np.linalg.norm(g_x) <= tol:
                self.converged = True
                break
            f_y, g_y = f_grad(yk)
            while True:
                cand = yk - g_y / L
                f_c, g_c = f_grad(cand)
                if f_c <= f_y - 0.5 * float(g_y @ g_y) / L + 1e-15 * abs(f_y):
                    break
                L *= 2.0
            if f_c > f_x:
                # adaptive restart: drop momentum
                t = 1.0
                yk = theta.copy()
                continue
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            x_prev, theta = theta, cand
            f_x, g_x = f_c, g_c
            yk = theta + ((t - 1.0) / t_next) * (theta - x_prev)
            t = t_next
            self.n_iter = it + 1
        else:
            self.converged = bool(np.linalg.norm(g_x) <= tol)
        self.coef = theta[:-1]
        self.intercept = float(theta[-1])
        self.grad_norm = float(np.linalg.norm(g_x))
        return self

    def decision_function(self, X):
        return X.astype(np.float64, copy=False) @ self.coef + self.intercept

    def predict_proba(self, X):
        return expit(self.decision_function(X))

    def to_state(self):
        return {"coef": self.coef.tolist(), "intercept": self.intercept,
                "n_iter": self.n_iter, "converged": self.converged,
                "grad_norm": self.grad_norm}

    @classmethod
    def from_state(cls, st, params):
        m = cls(**params)
        m.coef = np.asarray(st["coef"], dtype=np.float64)
        m.intercept = float(st["intercept"])
        m.n_iter, m.converged, m.grad_norm = st["n_iter"], st["converged"], st["grad_norm"]
        return m


class AdaBoost:
    """SAMME with depth-1 stumps; P(T) = logistic(weighted vote margin / total weight)."""

    defaults = {"n_estimators": 100, "learning_rate": 1.0}

    def __init__(self, **params):
        self.params = {**self.defaults, **params}
        self.stumps: list[Tree] = []
        self.alphas: list[float] = []

    def fit(self, X, y, seed=0, threads=1):
        y = np.asarray(y)
        n = len(y)
        w = np.full(n, 1.0 / n)
        lr = float(self.params["learning_rate"])
        self.stumps, self.alphas = [], []
        for m in range(int(self.params["n_estimators"])):
            stump = grow_classification_tree(X, y, w, max_depth=1, rng=tree_rng(seed, m))
            h = (stump.predict(X) > 0.5).astype(np.int8)
            miss = h != y
            err = float(w[miss].sum() / w.sum())
            if err <= 0.0:
                self.stumps.append(stump)
                self.alphas.append(1.0)
                break
            if err >= 0.5:
                break
            alpha = lr * math.log((1.0 - err) / err)
            self.stumps.append(stump)
            self.alphas.append(alpha)
            w = w * np.exp(alpha * miss)
            w /= w.sum()
        return self

    def margin(self, X):
        total = np.zeros(X.shape[0])
        for stump, a in zip(self.stumps, self.alphas):
            total += a * np.where(stump.predict(X) > 0.5, 1.0, -1.0)
        return total / sum(self.alphas)

    def predict_proba(self, X):
        if not self.stumps:
            return np.full(X.shape[0], 0.5)
        return expit(self.margin(X))

    def impurity_importance(self, d):
        acc = np.zeros(d)
        for stump, a in zip(self.stumps, self.alphas):
            g = stump.feature_gains(d)
            if g.sum() > 0:
                acc += a * g / g.sum()
        return acc / acc.sum() if acc.sum() > 0 else acc

    def to_state(self):
        return {"stumps": [s.to_json() for s in self.stumps], "alphas": list(self.alphas)}

    @classmethod
    def from_state(cls, st, params):
        m = cls(**params)
        m.stumps = [Tree.from_json(s) for s in st["stumps"]]
        m.alphas = [float(a) for a in st["alphas"]]
        return m


class GradientBoosting:
    """Stagewise logistic-loss boosting with Newton leaves and shrinkage.

    A stage whose step would raise the training loss is shrunk by halving
    (at most ``max_halvings`` times) and otherwise skipped, so the recorded
    per-stage training loss never increases.
    """

    defaults = {"n_estimators": 200, "max_depth": 6, "learning_rate": 0.1,
                "reg_lambda": 1.0, "min_child_weight": 1e-3, "max_halvings": 20}

    def __init__(self, **params):
        self.params = {**self.defaults, **params}
        self.trees: list[Tree] = []
        self.steps: list[float] = []

    def fit(self, X, y, seed=0, threads=1):
        p = self.params
        y = np.asarray(y, dtype=np.float64)
        prior = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
        self.base = math.log(prior / (1 - prior))
        F = np.full(len(y), self.base)
        loss = mean_log_loss(y, expit(F))
        self.train_loss = [loss]
        self.trees, self.steps = [], []
        for _ in range(int(p["n_estimators"])):
            prob = expit(F)
            grad = prob - y
            hess = np.maximum(prob * (1 - prob), 1e-16)
            tree = grow_regression_tree(X, grad, hess, max_depth=int(p["max_depth"]),
                                        reg_lambda=float(p["reg_lambda"]),
                                        min_child_weight=float(p["min_child_weight"]))
            if tree.n_nodes == 1 and abs(tree.value[0]) < 1e-12:
                break
            inc = tree.predict(X)
            step = float(p["learning_rate"])
            for _ in range(int(p["max_halvings"]) + 1):
                F_new = F + step * inc
                new_loss = mean_log_loss(y, expit(F_new))
                if new_loss <= loss:
                    break
                step *= 0.5
            else:
                step = 0.0
                F_new, new_loss = F, loss
            if step == 0.0:
                self.train_loss.append(loss)
                break
            self.trees.append(tree)
            self.steps.append(step)
            F, loss = F_new, new_loss
            self.train_loss.append(loss)
        return self

    def raw_score(self, X):
        F = np.full(X.shape[0], self.base)
        for t, s in zip(self.trees, self.steps):
            F += s * t.predict(X)
        return F

    def predict_proba(self, X):
        return expit(self.raw_score(X))

    def impurity_importance(self, d):
        acc = np.zeros(d)
        for t in self.trees:
            acc += t.feature_gains(d)
        return acc / acc.sum() if acc.sum() > 0 else acc

    def to_state(self):
        return {"base": self.base, "trees": [t.to_json() for t in self.trees],
                "steps": list(self.steps), "train_loss": list(self.train_loss)}

    @classmethod
    def from_state(cls, st, params):
        m = cls(**params)
        m.base = float(st["base"])
        m.trees = [Tree.from_json(t) for t in st["trees"]]
        m.steps = [float(s) for s in st["steps"]]
        m.train_loss = list(st["train_loss"])
        return m
