"""Honest causal forest on locally centered data.

Trees are grown on residuals (outcome and treatment each centered by the
cross-fitted nuisance predictions). Each tree sees a subsample drawn
without replacement, split 50/50 into a split half that chooses the
splits and an estimate half that alone determines every node's effect
estimate: the no-intercept slope of outcome residuals on treatment
residuals. The forest predicts through co-leaf weights: each query point
collects the estimate-half observations sharing its leaf in every tree,
and the effect is the weighted residual-on-residual ratio.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, FoldPlan, split_for_fold
from .metalearners import CateEstimate
from .nuisance import NuisanceEstimates
from .util import fingerprint, rng_stream

FOREST_DUMP_VERSION = 1


@dataclass(frozen=True)
class CausalForestParams:
    n_trees: int = 500
    min_node_size: int = 10
    subsample_fraction: float = 0.5
    mtry_fraction: float = 1.0 / 3.0
    max_depth: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ValueError("subsample_fraction must be in (0, 1]")
        if not 0.0 < self.mtry_fraction <= 1.0:
            raise ValueError("mtry_fraction must be in (0, 1]")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")

    def to_json_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "min_node_size": self.min_node_size,
            "subsample_fraction": self.subsample_fraction,
            "mtry_fraction": self.mtry_fraction,
            "max_depth": self.max_depth,
            "seed": self.seed,
        }


@dataclass
class _CFNode:
    feature: int = -1
    threshold: float = math.nan
    left: "_CFNode | None" = None
    right: "_CFNode | None" = None
    # honest statistics over the estimate-half rows reaching this node
    members: np.ndarray | None = None
    count: int = 0
    sum_yd: float = 0.0
    sum_dd: float = 0.0
    tau: float = math.nan
    valid: bool = False

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass(frozen=True)
class CausalTree:
    """One honest tree: split structure plus per-node honest estimates."""

    root: _CFNode = field(repr=False)
    split_indices: np.ndarray
    estimate_indices: np.ndarray


@dataclass(frozen=True)
class CausalForestModel:
    trees: tuple[CausalTree, ...]
    params: CausalForestParams
    y_res: np.ndarray  # centered outcome, full-length, original row order
    d_res: np.ndarray  # centered treatment, full-length
    train_indices: np.ndarray
    p: int


def local_center(data: Dataset, nuis: NuisanceEstimates) -> tuple[np.ndarray, np.ndarray]:
    """Residualize outcome and treatment against the out-of-fold nuisances."""
    y_res = data.y - nuis.mu_hat
    d_res = data.d.astype(float) - nuis.e_hat
    return y_res, d_res


def leaf_tau(y_res, d_res) -> float:
    """No-intercept slope of outcome residuals on treatment residuals."""
    y_res = np.asarray(y_res, dtype=float)
    d_res = np.asarray(d_res, dtype=float)
    denom = float(np.dot(d_res, d_res))
    if denom <= 0.0:
        raise ValueError("degenerate leaf: sum of squared treatment residuals is zero")
    return float(np.dot(y_res, d_res) / denom)


def _best_causal_split(x, y_res, d_res, rows, feats, min_node_size):
    """Maximize n_L * n_R * (tau_L - tau_R)^2 over midpoint candidates.

    Ties resolve to the lowest feature index then lowest threshold via
    ascending scans with a strict improvement test; only strictly
    positive criterion values split.
    """
    n_node = rows.shape[0]
    yd = y_res[rows] * d_res[rows]
    dd = d_res[rows] * d_res[rows]
    syd = float(yd.sum())
    sdd = float(dd.sum())
    best = None
    for f in feats:
        order = np.argsort(x[rows, f], kind="stable")
        xs = x[rows, f][order]
        cyd = np.cumsum(yd[order])[:-1]
        cdd = np.cumsum(dd[order])[:-1]
        cnt_l = np.arange(1, n_node)
        rdd = sdd - cdd
        valid = (
            (xs[:-1] < xs[1:])
            & (cnt_l >= min_node_size)
            & (n_node - cnt_l >= min_node_size)
            & (cdd > 0.0)
            & (rdd > 0.0)
        )
        if not valid.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            tau_l = cyd / cdd
            tau_r = (syd - cyd) / rdd
            score = cnt_l * (n_node - cnt_l) * (tau_l - tau_r) ** 2
        score[~valid] = -np.inf
        j = int(np.argmax(score))
        if score[j] > 0.0 and (best is None or score[j] > best[0]):
            best = (float(score[j]), int(f), float(0.5 * (xs[j] + xs[j + 1])))
    return best


def _grow_causal(x, y_res, d_res, rows, depth, params, rng, n_feats, p) -> _CFNode:
    node = _CFNode()
    if params.max_depth is not None and depth >= params.max_depth:
        return node
    if rows.shape[0] < 2 * params.min_node_size:
        return node
    if n_feats < p:
        feats = np.sort(rng.choice(p, size=n_feats, replace=False))
    else:
        feats = np.arange(p)
    found = _best_causal_split(x, y_res, d_res, rows, feats, params.min_node_size)
    if found is None:
        return node
    _, f, thr = found
    go_left = x[rows, f] <= thr
    node.feature = f
    node.threshold = thr
    node.left = _grow_causal(x, y_res, d_res, rows[go_left], depth + 1, params,
                             rng, n_feats, p)
    node.right = _grow_causal(x, y_res, d_res, rows[~go_left], depth + 1, params,
                              rng, n_feats, p)
    return node


def _attach_honest_stats(node: _CFNode, x, y_res, d_res, d, members: np.ndarray) -> None:
    """Fill every node's estimate-half statistics, routing members downward."""
    node.members = members
    node.count = int(members.shape[0])
    yd = y_res[members] * d_res[members]
    dd = d_res[members] * d_res[members]
    node.sum_yd = float(yd.sum())
    node.sum_dd = float(dd.sum())
    arms = d[members]
    node.valid = bool(
        node.count > 0
        and node.sum_dd > 0.0
        and (arms == 1).any()
        and (arms == 0).any()
    )
    node.tau = node.sum_yd / node.sum_dd if node.sum_dd > 0.0 else math.nan
    if not node.is_leaf:
        go_left = x[members, node.feature] <= node.threshold
        _attach_honest_stats(node.left, x, y_res, d_res, d, members[go_left])
        _attach_honest_stats(node.right, x, y_res, d_res, d, members[~go_left])


def fit_causal_tree(data: Dataset, y_res, d_res, indices, params: CausalForestParams,
                    rng: np.random.Generator) -> CausalTree:
    """Grow one honest tree on the given rows.

    The rows are shuffled and halved: splits are chosen only from the
    first half, honest estimates come only from the second. A leaf whose
    estimate subsample misses an arm (or has zero squared treatment
    residual) is invalid and defers to its nearest valid ancestor.
    """
    indices = np.asarray(indices, dtype=int)
    perm = rng.permutation(indices)
    half = perm.shape[0] // 2
    split_half = np.sort(perm[:half])
    est_half = np.sort(perm[half:])
    p = data.p
    n_feats = max(1, math.ceil(params.mtry_fraction * p))
    root = _grow_causal(data.x, y_res, d_res, split_half, 0, params, rng, n_feats, p)
    _attach_honest_stats(root, data.x, y_res, d_res, data.d, est_half)
    if not root.valid:
        raise ValueError("estimate half cannot identify an effect at the root")
    return CausalTree(root=root, split_indices=split_half, estimate_indices=est_half)


def fit_causal_forest(data: Dataset, params: CausalForestParams,
                      nuis: NuisanceEstimates,
                      train_indices=None) -> CausalForestModel:
    """Fit a forest of honest trees on locally centered data.

    Each tree draws its subsample without replacement from the training
    rows with an independent per-tree stream of the forest seed, so the
    model is reproducible and earlier trees do not change when n_trees
    grows.
    """
    y_res, d_res = local_center(data, nuis)
    train = np.arange(data.n) if train_indices is None else np.asarray(train_indices, dtype=int)
    n_sub = max(4, int(math.floor(params.subsample_fraction * train.shape[0])))
    n_sub = min(n_sub, train.shape[0])
    trees = []
    for b in range(params.n_trees):
        rng = rng_stream(params.seed, 6, b)
        sub = rng.choice(train, size=n_sub, replace=False)
        trees.append(fit_causal_tree(data, y_res, d_res, sub, params, rng))
    return CausalForestModel(trees=tuple(trees), params=params, y_res=y_res,
                             d_res=d_res, train_indices=train, p=data.p)


def _effective_nodes(tree: CausalTree, x: np.ndarray):
    """Yield (node, rows) pairs mapping query rows to their effective node.

    The effective node is the deepest valid node on the root-to-leaf
    path; validity is monotone up the tree, so this realizes the
    nearest-valid-ancestor fallback.
    """
    out = []
    stack = [(tree.root, np.arange(x.shape[0]), None)]
    while stack:
        node, rows, last_valid = stack.pop()
        if rows.size == 0:
            continue
        if node.valid:
            last_valid = node
        if node.is_leaf:
            out.append((last_valid, rows))
            continue
        go_left = x[rows, node.feature] <= node.threshold
        stack.append((node.left, rows[go_left], last_valid))
        stack.append((node.right, rows[~go_left], last_valid))
    return out


def predict_cate(model: CausalForestModel, x) -> np.ndarray:
    """Co-leaf weighted residual-on-residual effect for each query row."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.p:
        raise ValueError(f"model trained on p={model.p}, got p={x.shape[1]}")
    num = np.zeros(x.shape[0])
    den = np.zeros(x.shape[0])
    for tree in model.trees:
        for node, rows in _effective_nodes(tree, x):
            num[rows] += node.sum_yd / node.count
            den[rows] += node.sum_dd / node.count
    return num / den


def forest_weights(model: CausalForestModel, x_row) -> np.ndarray:
    """Per-observation kernel weights for one query point.

    Nonnegative, summing to one, supported on the estimate-half
    observations sharing an (effective) leaf with the query point.
    """
    x = np.asarray(x_row, dtype=float).reshape(1, -1)
    alpha = np.zeros(model.y_res.shape[0])
    b = len(model.trees)
    for tree in model.trees:
        for node, rows in _effective_nodes(tree, x):
            if rows.size:
                alpha[node.members] += 1.0 / (b * node.count)
    return alpha


def causal_forest_learner(data: Dataset, plan: FoldPlan, params: CausalForestParams,
                          nuis: NuisanceEstimates) -> CateEstimate:
    """Outer fold loop: forests trained on each training complement predict its fold."""
    tau = np.empty(data.n)
    for fold in range(1, plan.k + 1):
        split = split_for_fold(plan, fold)
        model = fit_causal_forest(data, params, nuis, train_indices=split.train_indices)
        tau[split.estimate_indices] = predict_cate(model, data.x[split.estimate_indices])
    return CateEstimate(
        tau_hat=tau,
        method="CF",
        seed=params.seed,
        config_fingerprint=fingerprint({"method": "CF", **params.to_json_dict(),
                                        "k": plan.k}),
    )


# --------------------------------------------------------------------------
# Persistence: versioned JSON dump of the fitted forest
# --------------------------------------------------------------------------

def _node_to_dict(node: _CFNode) -> dict:
    out = {
        "feature": node.feature,
        "threshold": None if math.isnan(node.threshold) else node.threshold,
        "members": node.members.tolist(),
        "sum_yd": node.sum_yd,
        "sum_dd": node.sum_dd,
        "tau": None if math.isnan(node.tau) else node.tau,
        "valid": node.valid,
    }
    if not node.is_leaf:
        out["left"] = _node_to_dict(node.left)
        out["right"] = _node_to_dict(node.right)
    return out


def _node_from_dict(block: dict) -> _CFNode:
    node = _CFNode(
        feature=int(block["feature"]),
        threshold=math.nan if block["threshold"] is None else float(block["threshold"]),
        members=np.asarray(block["members"], dtype=int),
        sum_yd=float(block["sum_yd"]),
        sum_dd=float(block["sum_dd"]),
        tau=math.nan if block["tau"] is None else float(block["tau"]),
        valid=bool(block["valid"]),
    )
    node.count = node.members.shape[0]
    if "left" in block:
        node.left = _node_from_dict(block["left"])
        node.right = _node_from_dict(block["right"])
    return node


def forest_to_json(model: CausalForestModel) -> str:
    payload = {
        "version": FOREST_DUMP_VERSION,
        "params": model.params.to_json_dict(),
        "p": model.p,
        "train_indices": model.train_indices.tolist(),
        "y_res": model.y_res.tolist(),
        "d_res": model.d_res.tolist(),
        "trees": [
            {
                "split_indices": t.split_indices.tolist(),
                "estimate_indices": t.estimate_indices.tolist(),
                "root": _node_to_dict(t.root),
            }
            for t in model.trees
        ],
    }
    return json.dumps(payload)


def forest_from_json(text: str) -> CausalForestModel:
    payload = json.loads(text)
    if payload.get("version") != FOREST_DUMP_VERSION:
        raise ValueError(f"unsupported forest dump version {payload.get('version')!r}")
    trees = tuple(
        CausalTree(
            root=_node_from_dict(t["root"]),
            split_indices=np.asarray(t["split_indices"], dtype=int),
            estimate_indices=np.asarray(t["estimate_indices"], dtype=int),
        )
        for t in payload["trees"]
    )
    return CausalForestModel(
        trees=trees,
        params=CausalForestParams(**payload["params"]),
        y_res=np.asarray(payload["y_res"], dtype=float),
        d_res=np.asarray(payload["d_res"], dtype=float),
        train_indices=np.asarray(payload["train_indices"], dtype=int),
        p=int(payload["p"]),
    )
