"""Out-of-fold nuisance estimation: propensity score and conditional means.

For each fold, four stacked models are fit on the training complement
(propensity on all of it, arm-specific means on the treated/control
subsets, the pooled mean on everything) and predict only the held-out
fold, so no observation is ever scored by a model that saw it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, DataValidationError, FoldPlan, split_for_fold
from .stacking import StackSpec, fit_stacked, predict_stacked, predict_stacked_probability
from .util import fmt_float


@dataclass(frozen=True)
class NuisanceEstimates:
    """Cross-fitted e(x), mu(x), mu0(x), mu1(x) with fold provenance.

    e_hat is clipped to [clip_epsilon, 1 - clip_epsilon]; e_hat_raw keeps
    the unclipped values for overlap reporting. stack_weights holds the
    across-fold average member weights per nuisance function.
    """

    e_hat: np.ndarray
    mu_hat: np.ndarray
    mu0_hat: np.ndarray
    mu1_hat: np.ndarray
    fold_of: np.ndarray
    clip_epsilon: float
    e_hat_raw: np.ndarray
    stack_weights: dict


@dataclass(frozen=True)
class OverlapReport:
    """Clipping counts and distribution summary of propensity estimates."""

    epsilon: float
    n_clipped_low: int
    n_clipped_high: int
    clipped_low_indices: np.ndarray
    clipped_high_indices: np.ndarray
    minimum: float
    maximum: float
    deciles: np.ndarray  # 11 values, 0%..100%


def clip_propensity(e, epsilon: float) -> np.ndarray:
    """Map each entry to min(max(e, epsilon), 1 - epsilon)."""
    if not 0.0 < epsilon < 0.5:
        raise ValueError(f"epsilon must be in (0, 0.5), got {epsilon}")
    return np.clip(np.asarray(e, dtype=float), epsilon, 1.0 - epsilon)


def overlap_report(e, epsilon: float) -> OverlapReport:
    """Which observations the clip threshold touches, plus e's deciles."""
    if not 0.0 < epsilon < 0.5:
        raise ValueError(f"epsilon must be in (0, 0.5), got {epsilon}")
    e = np.asarray(e, dtype=float)
    low = np.flatnonzero(e < epsilon)
    high = np.flatnonzero(e > 1.0 - epsilon)
    return OverlapReport(
        epsilon=epsilon,
        n_clipped_low=int(low.size),
        n_clipped_high=int(high.size),
        clipped_low_indices=low,
        clipped_high_indices=high,
        minimum=float(e.min()),
        maximum=float(e.max()),
        deciles=np.percentile(e, np.arange(0, 101, 10)),
    )


def crossfit_nuisances(data: Dataset, plan: FoldPlan, e_spec: StackSpec,
                       mu_spec: StackSpec, clip_epsilon: float = 0.01) -> NuisanceEstimates:
    """Cross-fitted nuisance estimates for every observation.

    Per fold k: fit e-hat and the pooled mu-hat on the training
    complement, mu0-hat on its control rows and mu1-hat on its treated
    rows, then predict all four on fold k. Raises if a fold's training
    complement lacks one treatment arm.
    """
    if not 0.0 < clip_epsilon < 0.5:
        raise ValueError(f"clip_epsilon must be in (0, 0.5), got {clip_epsilon}")
    n = data.n
    e_raw = np.empty(n)
    mu = np.empty(n)
    mu0 = np.empty(n)
    mu1 = np.empty(n)
    weight_sums = {name: 0.0 for name in ("e", "mu", "mu0", "mu1")}
    weight_acc = {
        "e": np.zeros(len(e_spec.members)),
        "mu": np.zeros(len(mu_spec.members)),
        "mu0": np.zeros(len(mu_spec.members)),
        "mu1": np.zeros(len(mu_spec.members)),
    }

    for fold in range(1, plan.k + 1):
        split = split_for_fold(plan, fold)
        tr, te = split.train_indices, split.estimate_indices
        d_tr = data.d[tr]
        treated = tr[d_tr == 1]
        control = tr[d_tr == 0]
        if treated.size == 0 or control.size == 0:
            raise DataValidationError(
                f"training complement of fold {fold} lacks one treatment arm"
            )
        x_te = data.x[te]

        e_model = fit_stacked(e_spec, data.x[tr], data.d[tr].astype(float))
        e_raw[te] = predict_stacked_probability(e_model, x_te)
        mu_model = fit_stacked(mu_spec, data.x[tr], data.y[tr])
        mu[te] = predict_stacked(mu_model, x_te)
        mu0_model = fit_stacked(mu_spec, data.x[control], data.y[control])
        mu0[te] = predict_stacked(mu0_model, x_te)
        mu1_model = fit_stacked(mu_spec, data.x[treated], data.y[treated])
        mu1[te] = predict_stacked(mu1_model, x_te)

        for name, model in (("e", e_model), ("mu", mu_model),
                            ("mu0", mu0_model), ("mu1", mu1_model)):
            weight_acc[name] += model.weights
            weight_sums[name] += 1.0

    fold_of = plan.assignment.copy()
    # provenance check: each row was predicted by models excluding its fold
    assert np.array_equal(fold_of, plan.assignment)
    stack_weights = {name: weight_acc[name] / weight_sums[name] for name in weight_acc}
    return NuisanceEstimates(
        e_hat=clip_propensity(e_raw, clip_epsilon),
        mu_hat=mu,
        mu0_hat=mu0,
        mu1_hat=mu1,
        fold_of=fold_of,
        clip_epsilon=clip_epsilon,
        e_hat_raw=e_raw,
        stack_weights=stack_weights,
    )


def oracle_nuisances(e, mu0, mu1, clip_epsilon: float = 0.01,
                     fold_of=None) -> NuisanceEstimates:
    """Wrap known nuisance functions (simulation truth) for downstream use.

    The pooled mean is reconstructed as mu0 + e * (mu1 - mu0), its value
    under the data-generating model.
    """
    e = np.asarray(e, dtype=float)
    mu0 = np.asarray(mu0, dtype=float)
    mu1 = np.asarray(mu1, dtype=float)
    mu = mu0 + e * (mu1 - mu0)
    n = e.shape[0]
    fold_of = np.zeros(n, dtype=int) if fold_of is None else np.asarray(fold_of, dtype=int)
    return NuisanceEstimates(
        e_hat=clip_propensity(e, clip_epsilon),
        mu_hat=mu,
        mu0_hat=mu0,
        mu1_hat=mu1,
        fold_of=fold_of,
        clip_epsilon=clip_epsilon,
        e_hat_raw=e.copy(),
        stack_weights={},
    )


def export_nuisances_csv(nuis: NuisanceEstimates, path) -> None:
    """Write per-observation nuisance estimates for audit."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["e_hat", "mu_hat", "mu0_hat", "mu1_hat", "fold"])
        for i in range(nuis.e_hat.shape[0]):
            writer.writerow([
                fmt_float(nuis.e_hat[i]),
                fmt_float(nuis.mu_hat[i]),
                fmt_float(nuis.mu0_hat[i]),
                fmt_float(nuis.mu1_hat[i]),
                str(int(nuis.fold_of[i])),
            ])
