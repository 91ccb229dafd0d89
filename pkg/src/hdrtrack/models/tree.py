"""CART on binary presence features.

Every split is "header j absent" (left child) versus "header j present"
(right child), so a tree is fully described by flat node arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAF = -1


@dataclass
class Tree:
    feature: np.ndarray      # int64, LEAF for leaves
    left: np.ndarray         # child taken when the feature is absent
    right: np.ndarray        # child taken when the feature is present
    value: np.ndarray        # leaf output: P(T) or a boosting increment
    counts: np.ndarray       # (n_nodes, 2) weighted [NT, T] totals; zeros for regression
    gain: np.ndarray         # impurity decrease credited to each split node

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == LEAF))

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max()) if self.n_nodes else 0

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of a dense 0/1 matrix."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] != LEAF
        while active.any():
            r = rows[active]
            nd = node[r]
            present = X[r, self.feature[nd]] != 0
            node[r] = np.where(present, self.right[nd], self.left[nd])
            active[r] = self.feature[node[r]] != LEAF
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def feature_gains(self, d: int) -> np.ndarray:
        out = np.zeros(d)
        split = self.feature != LEAF
        np.add.at(out, self.feature[split], self.gain[split])
        return out

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "counts": self.counts.tolist(),
            "gain": self.gain.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Tree":
        return cls(
            np.asarray(obj["feature"], dtype=np.int64),
            np.asarray(obj["left"], dtype=np.int64),
            np.asarray(obj["right"], dtype=np.int64),
            np.asarray(obj["value"], dtype=np.float64),
            np.asarray(obj["counts"], dtype=np.float64).reshape(-1, 2),
            np.asarray(obj["gain"], dtype=np.float64),
        )


class _Builder:
    def __init__(self):
        self.feature, self.left, self.right = [], [], []
        self.value, self.counts, self.gain = [], [], []

    def add(self, value: float, counts=(0.0, 0.0)) -> int:
        self.feature.append(LEAF)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(value)
        self.counts.append(counts)
        self.gain.append(0.0)
        return len(self.feature) - 1

    def finish(self) -> Tree:
        return Tree(np.asarray(self.feature, dtype=np.int64),
                    np.asarray(self.left, dtype=np.int64),
                    np.asarray(self.right, dtype=np.int64),
                    np.asarray(self.value, dtype=np.float64),
                    np.asarray(self.counts, dtype=np.float64).reshape(-1, 2),
                    np.asarray(self.gain, dtype=np.float64))


def _weighted_gini(w: np.ndarray, p: np.ndarray) -> np.ndarray:
    """W * gini for totals W and positive mass P (zero where W == 0)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 2.0 * p * (w - p) / w
    return np.where(w > 0, out, 0.0)


def _candidate_chunks(d: int, max_features: int | None, rng):
    if max_features is None or max_features >= d:
        yield np.arange(d)
        return
    perm = rng.permutation(d)
    for s in range(0, d, max_features):
        yield np.sort(perm[s:s + max_features])


def _pick(scores: np.ndarray, valid: np.ndarray, tie_break: str, rng):
    if not valid.any():
        return None
    masked = np.where(valid, scores, -np.inf)
    best = masked.max()
    if tie_break == "random":
        tol = 1e-12 * max(1.0, abs(best))
        ties = np.flatnonzero(valid & (masked >= best - tol))
        return int(ties[rng.integers(len(ties))]) if len(ties) > 1 else int(ties[0])
    return int(np.argmax(masked))


def grow_classification_tree(X: np.ndarray, y: np.ndarray, sample_weight=None,
                             max_depth: int | None = None, min_samples_leaf: int = 1,
                             max_features: int | None = None, tie_break: str = "first",
                             rng: np.random.Generator | None = None) -> Tree:
    """Gini CART grown until purity, ``max_depth``, or no valid split remains.

    Rows with zero weight are ignored. Ties between equally good splits go
    to the lowest feature index unless ``tie_break == "random"``.
    """
    n, d = X.shape
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    wy = w * y
    rng = rng or np.random.default_rng(0)
    b = _Builder()
    root_idx = np.flatnonzero(w > 0)

    def node_stats(idx):
        W = float(w[idx].sum())
        P = float(wy[idx].sum())
        return W, P

    W, P = node_stats(root_idx)
    root = b.add(P / W if W > 0 else 0.0, (W - P, P))
    stack = [(root, root_idx, 0, W, P)]
    while stack:
        node, idx, depth, W, P = stack.pop()
        if P <= 0.0 or P >= W or len(idx) < 2 * min_samples_leaf:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        parent_imp = 2.0 * P * (W - P) / W
        best = None
        for feats in _candidate_chunks(d, max_features, rng):
            block = X[idx] if len(feats) == d else X[np.ix_(idx, feats)]
            W1 = w[idx] @ block
            P1 = wy[idx] @ block
            C1 = block.sum(axis=0, dtype=np.int64)
            W0, P0 = W - W1, P - P1
            valid = (C1 >= min_samples_leaf) & (len(idx) - C1 >= min_samples_leaf) \
                & (W1 > 0) & (W0 > 0)
            dec = parent_imp - _weighted_gini(W1, P1) - _weighted_gini(W0, P0)
            j = _pick(dec, valid, tie_break, rng)
            if j is not None:
                best = (int(feats[j]), float(dec[j]), float(W1[j]), float(P1[j]))
                break
        if best is None:
            continue
        f, dec, w1, p1 = best
        present = X[idx, f] != 0
        idx_l, idx_r = idx[~present], idx[present]
        w0, p0 = W - w1, P - p1
        left = b.add(p0 / w0, (w0 - p0, p0))
        right = b.add(p1 / w1, (w1 - p1, p1))
        b.feature[node], b.left[node], b.right[node] = f, left, right
        b.gain[node] = max(dec, 0.0)
        # right first so the left subtree is expanded first (preorder ids)
        stack.append((right, idx_r, depth + 1, w1, p1))
        stack.append((left, idx_l, depth + 1, w0, p0))
    return b.finish()


def grow_regression_tree(X: np.ndarray, grad: np.ndarray, hess: np.ndarray,
                         max_depth: int = 6, reg_lambda: float = 1.0,
                         min_child_weight: float = 1e-3, min_gain: float = 0.0,
                         rows: np.ndarray | None = None) -> Tree:
    """Second-order boosting tree: leaf value -G/(H+lambda), split gain on G^2/(H+lambda)."""
    n, d = X.shape
    b = _Builder()
    idx0 = np.arange(n) if rows is None else np.asarray(rows)

    def score(G, H):
        # empty children (H == 0 with lambda == 0) are masked out by `valid`
        with np.errstate(divide="ignore", invalid="ignore"):
            return G * G / (H + reg_lambda)

    G, H = float(grad[idx0].sum()), float(hess[idx0].sum())
    root = b.add(-G / (H + reg_lambda))
    stack = [(root, idx0, 0, G, H)]
    while stack:
        node, idx, depth, G, H = stack.pop()
        if depth >= max_depth or len(idx) < 2:
            continue
        block = X[idx]
        G1 = grad[idx] @ block
        H1 = hess[idx] @ block
        C1 = block.sum(axis=0, dtype=np.int64)
        G0, H0 = G - G1, H - H1
        gain = score(G1, H1) + score(G0, H0) - score(G, H)
        valid = (C1 > 0) & (C1 < len(idx)) & (H1 >= min_child_weight) & (H0 >= min_child_weight)
        j = _pick(gain, valid, "first", None)
        if j is None or gain[j] <= min_gain:
            continue
        g1, h1 = float(G1[j]), float(H1[j])
        g0, h0 = G - g1, H - h1
        present = X[idx, j] != 0
        left = b.add(-g0 / (h0 + reg_lambda))
        right = b.add(-g1 / (h1 + reg_lambda))
        b.feature[node], b.left[node], b.right[node] = j, left, right
        b.gain[node] = float(gain[j])
        stack.append((right, idx[present], depth + 1, g1, h1))
        stack.append((left, idx[~present], depth + 1, g0, h0))
    return b.finish()
