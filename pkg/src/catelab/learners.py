"""Weighted base learners: regression tree, random forest, gradient boosting, ridge.

Every learner minimizes weighted squared error and is deterministic given
its spec seed. Trees search splits exhaustively over midpoints between
sorted distinct feature values; criterion ties break toward the lowest
feature index, then the lowest threshold, which keeps the split search
reproducible against a brute-force oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .util import rng_stream

KINDS = ("regression_tree", "random_forest", "gradient_boosting", "ridge")


@dataclass(frozen=True)
class LearnerSpec:
    """Configuration of one base learner.

    Only the fields relevant to `kind` are used:
      regression_tree:    max_depth (None = grow out), min_node_size
      random_forest:      n_trees, min_node_size, feature_subsample_fraction
      gradient_boosting:  n_rounds, learning_rate, max_depth (None -> 3)
      ridge:              penalty (lambda >= 0, intercept unpenalized)
    """

    kind: str
    max_depth: int | None = None
    min_node_size: int = 10
    n_trees: int = 1000
    feature_subsample_fraction: float = 1.0 / 3.0
    n_rounds: int = 200
    learning_rate: float = 0.1
    penalty: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 0.0 < self.feature_subsample_fraction <= 1.0:
            raise ValueError("feature_subsample_fraction must be in (0, 1]")
        if self.n_rounds < 0:
            raise ValueError("n_rounds must be >= 0")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")
        if self.penalty < 0.0:
            raise ValueError("penalty must be >= 0")

    def to_json_dict(self) -> dict:
        out = {"kind": self.kind, "seed": self.seed}
        if self.kind == "regression_tree":
            out.update(max_depth=self.max_depth, min_node_size=self.min_node_size)
        elif self.kind == "random_forest":
            out.update(
                n_trees=self.n_trees,
                min_node_size=self.min_node_size,
                feature_subsample_fraction=self.feature_subsample_fraction,
            )
        elif self.kind == "gradient_boosting":
            out.update(
                n_rounds=self.n_rounds,
                learning_rate=self.learning_rate,
                max_depth=self.max_depth,
            )
        else:
            out.update(penalty=self.penalty)
        return out

    @staticmethod
    def from_json_dict(block: dict) -> "LearnerSpec":
        return LearnerSpec(**block)


# --------------------------------------------------------------------------
# Regression tree
# --------------------------------------------------------------------------

@dataclass
class _TreeNode:
    value: float
    feature: int = -1
    threshold: float = math.nan
    left: "_TreeNode | None" = None
    right: "_TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


def _best_split(x, y, w, rows, orders, feats, min_node_size):
    """Best (score, feature, threshold) over candidate splits, or None.

    Score is the reduction in weighted SSE versus the parent node. Only
    strictly positive reductions count; ties resolve to the lowest feature
    index then the lowest threshold because features are scanned in
    ascending order with a strict improvement test, and positions within
    a feature are scanned in ascending threshold order.
    """
    n_node = rows.shape[0]
    member = np.zeros(x.shape[0], dtype=bool)
    member[rows] = True
    w_node = w[rows]
    y_node = y[rows]
    w_tot = w_node.sum()
    if w_tot <= 0.0:
        return None
    sy = float(np.dot(w_node, y_node))
    sy2 = float(np.dot(w_node, y_node * y_node))
    parent_sse = sy2 - sy * sy / w_tot

    best = None
    for f in feats:
        o = orders[f]
        o = o[member[o]]
        xs = x[o, f]
        ws = w[o]
        ys = y[o]
        cw = np.cumsum(ws)[:-1]
        cwy = np.cumsum(ws * ys)[:-1]
        cwy2 = np.cumsum(ws * ys * ys)[:-1]
        cnt_l = np.arange(1, n_node)
        rw = w_tot - cw
        valid = (
            (xs[:-1] < xs[1:])
            & (cnt_l >= min_node_size)
            & (n_node - cnt_l >= min_node_size)
            & (cw > 0.0)
            & (rw > 0.0)
        )
        if not valid.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            sse_l = cwy2 - cwy * cwy / cw
            sse_r = (sy2 - cwy2) - (sy - cwy) ** 2 / rw
            score = parent_sse - sse_l - sse_r
        score[~valid] = -np.inf
        j = int(np.argmax(score))
        if score[j] > 0.0 and (best is None or score[j] > best[0]):
            best = (float(score[j]), int(f), float(0.5 * (xs[j] + xs[j + 1])))
    return best


def _grow_tree(x, y, w, rows, depth, max_depth, min_node_size, orders,
               rng=None, n_feats=None) -> _TreeNode:
    w_node = w[rows]
    w_sum = w_node.sum()
    value = float(np.dot(w_node, y[rows]) / w_sum) if w_sum > 0 else 0.0
    node = _TreeNode(value=value)
    if max_depth is not None and depth >= max_depth:
        return node
    if rows.shape[0] < 2 * min_node_size:
        return node
    if rng is not None and n_feats is not None and n_feats < x.shape[1]:
        feats = np.sort(rng.choice(x.shape[1], size=n_feats, replace=False))
    else:
        feats = np.arange(x.shape[1])
    found = _best_split(x, y, w, rows, orders, feats, min_node_size)
    if found is None:
        return node
    _, f, thr = found
    go_left = x[rows, f] <= thr
    node.feature = f
    node.threshold = thr
    node.left = _grow_tree(x, y, w, rows[go_left], depth + 1, max_depth,
                           min_node_size, orders, rng, n_feats)
    node.right = _grow_tree(x, y, w, rows[~go_left], depth + 1, max_depth,
                            min_node_size, orders, rng, n_feats)
    return node


def _sort_orders(x) -> list[np.ndarray]:
    return [np.argsort(x[:, f], kind="stable") for f in range(x.shape[1])]


def _fit_tree(x, y, w, max_depth, min_node_size, rng=None, n_feats=None,
              orders=None) -> _TreeNode:
    if orders is None:
        orders = _sort_orders(x)
    rows = np.arange(x.shape[0])
    return _grow_tree(x, y, w, rows, 0, max_depth, min_node_size, orders, rng, n_feats)


def _predict_tree(node: _TreeNode, x: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape[0])
    stack = [(node, np.arange(x.shape[0]))]
    while stack:
        nd, rows = stack.pop()
        if rows.size == 0:
            continue
        if nd.is_leaf:
            out[rows] = nd.value
            continue
        go_left = x[rows, nd.feature] <= nd.threshold
        stack.append((nd.left, rows[go_left]))
        stack.append((nd.right, rows[~go_left]))
    return out


# --------------------------------------------------------------------------
# Fitted model container and the public fit / predict API
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FittedModel:
    """Opaque fitted learner state plus the spec that produced it."""

    spec: LearnerSpec
    p: int
    binary_target: bool
    state: object = field(repr=False)


@dataclass(frozen=True)
class _ForestState:
    trees: tuple
    # bootstrap already applied; prediction is the plain tree average


@dataclass(frozen=True)
class _BoostState:
    intercept: float
    trees: tuple
    learning_rate: float


def _normalized_weights(weights, n) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape[0] != n:
        raise ValueError(f"weights length {w.shape[0]} != n {n}")
    if not np.all(np.isfinite(w)) or (w < 0).any():
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0.0:
        raise ValueError("weights must not be all zero")
    return w * (n / total)


def fit(spec: LearnerSpec, x, y, weights=None) -> FittedModel:
    """Fit one learner by weighted squared-error loss.

    Weights are normalized to mean one internally, so scaling all weights
    by a positive constant leaves predictions unchanged for every kind.
    Forest weights act through the bootstrap sampling probabilities.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    n, p = x.shape
    if n == 0:
        raise ValueError("empty training data")
    if y.shape[0] != n:
        raise ValueError(f"x has {n} rows but y has {y.shape[0]}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in training data")
    w = _normalized_weights(weights, n)
    if spec.kind in ("regression_tree", "random_forest") and n < spec.min_node_size:
        raise ValueError(f"n={n} below min_node_size={spec.min_node_size}")

    binary = bool(np.isin(y, (0.0, 1.0)).all())

    if spec.kind == "ridge":
        state = _fit_ridge(x, y, w, spec.penalty)
    elif spec.kind == "regression_tree":
        state = _fit_tree(x, y, w, spec.max_depth, spec.min_node_size)
    elif spec.kind == "random_forest":
        state = _fit_forest(spec, x, y, weights)
    else:
        state = _fit_boosting(spec, x, y, w)
    return FittedModel(spec=spec, p=p, binary_target=binary, state=state)


def _fit_ridge(x, y, w, penalty) -> np.ndarray:
    n, p = x.shape
    sw = np.sqrt(w)
    design = np.hstack([np.ones((n, 1)), x]) * sw[:, None]
    target = y * sw
    if penalty > 0.0:
        reg = np.zeros((p, p + 1))
        reg[:, 1:] = math.sqrt(penalty) * np.eye(p)
        design = np.vstack([design, reg])
        target = np.concatenate([target, np.zeros(p)])
    beta, *_ = np.linalg.lstsq(design, target, rcond=None)
    return beta


def _fit_forest(spec: LearnerSpec, x, y, raw_weights) -> _ForestState:
    n, p = x.shape
    n_feats = max(1, math.ceil(spec.feature_subsample_fraction * p))
    probs = None
    if raw_weights is not None:
        w = np.asarray(raw_weights, dtype=float).reshape(-1)
        probs = w / w.sum()
    trees = []
    for b in range(spec.n_trees):
        rng = rng_stream(spec.seed, b)
        rows = rng.choice(n, size=n, replace=True, p=probs)
        xb = x[rows]
        yb = y[rows]
        trees.append(
            _fit_tree(xb, yb, np.ones(n), None, spec.min_node_size, rng, n_feats)
        )
    return _ForestState(trees=tuple(trees))


def _fit_boosting(spec: LearnerSpec, x, y, w) -> _BoostState:
    depth = 3 if spec.max_depth is None else spec.max_depth
    intercept = float(np.dot(w, y) / w.sum())
    current = np.full(y.shape[0], intercept)
    orders = _sort_orders(x)  # x is fixed across rounds
    trees = []
    for _ in range(spec.n_rounds):
        residual = y - current
        tree = _fit_tree(x, residual, w, depth, 1, orders=orders)
        current = current + spec.learning_rate * _predict_tree(tree, x)
        trees.append(tree)
    return _BoostState(intercept=intercept, trees=tuple(trees),
                       learning_rate=spec.learning_rate)


def predict(model: FittedModel, x) -> np.ndarray:
    """Predict with a fitted learner; pure function of (model, x)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.p:
        raise ValueError(f"model trained on p={model.p}, got p={x.shape[1]}")
    kind = model.spec.kind
    if kind == "ridge":
        beta = model.state
        return np.hstack([np.ones((x.shape[0], 1)), x]) @ beta
    if kind == "regression_tree":
        return _predict_tree(model.state, x)
    if kind == "random_forest":
        preds = np.stack([_predict_tree(t, x) for t in model.state.trees])
        return preds.mean(axis=0)
    state = model.state
    out = np.full(x.shape[0], state.intercept)
    for tree in state.trees:
        out = out + state.learning_rate * _predict_tree(tree, x)
    return out


def predict_probability(model: FittedModel, x) -> np.ndarray:
    """Regression predictions clamped to [0, 1] for a {0,1}-trained model."""
    if not model.binary_target:
        raise ValueError("predict_probability requires a model trained on a {0,1} target")
    return np.clip(predict(model, x), 0.0, 1.0)
