"""Super-learner stacking: K-fold CV predictions combined by non-negative least squares.

Each member is fit on cv_folds-1 folds and predicts the held-out fold,
giving an out-of-fold prediction matrix. NNLS (Lawson-Hanson active set)
finds nonnegative combination weights, which are then normalized to the
simplex for prediction; members are refit on the full data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import make_folds, split_for_fold
from .learners import FittedModel, LearnerSpec, fit, predict


@dataclass(frozen=True)
class StackSpec:
    """Member learner specs plus the CV fold count for weight estimation."""

    members: tuple[LearnerSpec, ...]
    cv_folds: int = 10
    seed: int = 0

    def __post_init__(self):
        if len(self.members) < 1:
            raise ValueError("stack needs at least one member")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        object.__setattr__(self, "members", tuple(self.members))

    def to_json_dict(self) -> dict:
        return {
            "members": [m.to_json_dict() for m in self.members],
            "cv_folds": self.cv_folds,
            "seed": self.seed,
        }

    @staticmethod
    def from_json_dict(block: dict) -> "StackSpec":
        return StackSpec(
            members=tuple(LearnerSpec.from_json_dict(m) for m in block["members"]),
            cv_folds=int(block.get("cv_folds", 10)),
            seed=int(block.get("seed", 0)),
        )


def single_learner_stack(spec: LearnerSpec, cv_folds: int = 2) -> StackSpec:
    """Convenience wrapper for a one-member stack."""
    return StackSpec(members=(spec,), cv_folds=cv_folds, seed=spec.seed)


@dataclass(frozen=True)
class StackedModel:
    """Full-data member fits plus simplex weights and per-member CV risk.

    `cv_risk_stack` is the weighted MSE achieved by the raw NNLS
    combination on the out-of-fold matrix (before simplex normalization),
    which by NNLS optimality never exceeds any single member's CV risk.
    """

    spec: StackSpec
    models: tuple[FittedModel, ...]
    weights: np.ndarray
    cv_risk: np.ndarray
    cv_risk_stack: float


def nnls(z, y, tol: float | None = None, max_iter: int | None = None) -> np.ndarray:
    """Solve min ||y - z @ beta||^2 subject to beta >= 0 (Lawson-Hanson).

    Active-set iterations terminate when the KKT conditions hold within
    `tol`: beta >= 0, gradient >= -tol outside the passive set, and
    complementary slackness on it.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in NNLS input")
    n, m = z.shape
    if y.shape[0] != n:
        raise ValueError("z and y row counts differ")
    if tol is None:
        scale = float(np.abs(z).sum(axis=0).max()) if z.size else 1.0
        tol = 10.0 * np.finfo(float).eps * max(1.0, scale) * max(n, m)
    if max_iter is None:
        max_iter = 3 * m + 30

    passive = np.zeros(m, dtype=bool)
    beta = np.zeros(m)
    grad = z.T @ y
    for _ in range(max_iter):
        candidates = ~passive & (grad > tol)
        if not candidates.any():
            break
        j = int(np.argmax(np.where(candidates, grad, -np.inf)))
        passive[j] = True
        while True:
            s = np.zeros(m)
            cols = np.flatnonzero(passive)
            sol, *_ = np.linalg.lstsq(z[:, cols], y, rcond=None)
            s[cols] = sol
            if (s[cols] > tol).all():
                beta = s
                break
            blocking = passive & (s <= tol)
            gaps = beta[blocking] - s[blocking]
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(gaps > 0, beta[blocking] / gaps, np.inf)
            alpha = float(ratios.min())
            if not np.isfinite(alpha):  # degenerate geometry: keep current beta
                break
            beta = beta + alpha * (s - beta)
            passive &= beta > tol
            if not passive.any():
                beta = np.zeros(m)
                break
        grad = z.T @ (y - z @ beta)
    return np.maximum(beta, 0.0)


def _merge_identical_columns(z: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Split each identical-column group's total weight evenly (tie rule)."""
    m = z.shape[1]
    out = beta.astype(float).copy()
    seen = np.zeros(m, dtype=bool)
    for j in range(m):
        if seen[j]:
            continue
        group = [k for k in range(j, m) if not seen[k] and np.array_equal(z[:, j], z[:, k])]
        for k in group:
            seen[k] = True
        if len(group) > 1:
            total = out[group].sum()
            out[group] = total / len(group)
    return out


def fit_stacked(spec: StackSpec, x, y, weights=None) -> StackedModel:
    """Fit the stack: OOF matrix, NNLS weights, full-data member refits.

    With sample weights, the NNLS system rows are scaled by sqrt(weight)
    so the combination minimizes the weighted CV loss. If NNLS returns
    the all-zero vector (no member correlates positively with y), the
    weights fall back to uniform.

    A single-member stack gets weight 1.0 by construction, so the
    out-of-fold pass is skipped entirely and cv_risk is NaN.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    n = y.shape[0]
    m = len(spec.members)
    if m == 1:
        model = fit(spec.members[0], x, y, weights)
        return StackedModel(spec=spec, models=(model,), weights=np.ones(1),
                            cv_risk=np.array([np.nan]), cv_risk_stack=np.nan)
    if spec.cv_folds > n:
        raise ValueError(f"cv_folds={spec.cv_folds} exceeds n={n}")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).reshape(-1)

    plan = make_folds(n, spec.cv_folds, spec.seed)
    z = np.empty((n, m))
    for fold in range(1, plan.k + 1):
        split = split_for_fold(plan, fold)
        tr, te = split.train_indices, split.estimate_indices
        fold_w = None if weights is None else w[tr]
        for j, member in enumerate(spec.members):
            model = fit(member, x[tr], y[tr], fold_w)
            z[te, j] = predict(model, x[te])

    w_norm = w / w.sum()
    cv_risk = np.array([float(np.dot(w_norm, (y - z[:, j]) ** 2)) for j in range(m)])

    sw = np.sqrt(w)
    beta = nnls(z * sw[:, None], y * sw)
    beta = _merge_identical_columns(z, beta)
    cv_risk_stack = float(np.dot(w_norm, (y - z @ beta) ** 2))
    total = beta.sum()
    if total <= 0.0:
        simplex = np.full(m, 1.0 / m)
    else:
        simplex = beta / total

    models = tuple(fit(member, x, y, weights) for member in spec.members)
    return StackedModel(spec=spec, models=models, weights=simplex,
                        cv_risk=cv_risk, cv_risk_stack=cv_risk_stack)


def predict_stacked(model: StackedModel, x) -> np.ndarray:
    """Weighted average of the member predictions."""
    preds = np.stack([predict(member, x) for member in model.models])
    return model.weights @ preds


def predict_stacked_probability(model: StackedModel, x) -> np.ndarray:
    """Stacked prediction clamped to [0, 1] for {0,1} targets."""
    return np.clip(predict_stacked(model, x), 0.0, 1.0)
