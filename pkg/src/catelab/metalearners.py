"""Meta-learners for per-observation treatment effects.

Two families live here. The fold-looped learners (S, T, X) fit outcome
models on each training complement and assemble effect estimates on the
held-out folds. The pseudo-outcome learners (DR, R, IPW) transform the
cross-fitted nuisances into per-observation scores whose conditional mean
is the treatment effect, then run a second-stage regression, either
in-sample or with the two-step half/5-subfold cross-fit scheme.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .dataset import Dataset, FoldPlan, split_for_fold
from .nuisance import NuisanceEstimates, crossfit_nuisances
from .stacking import StackSpec, fit_stacked, predict_stacked, predict_stacked_probability
from .util import fingerprint, fmt_float, rng_stream

METHOD_TAGS = ("S", "T", "X0", "X1", "DR", "R", "IPW")


@dataclass(frozen=True)
class PseudoOutcome:
    """Per-observation transformed outcomes plus regression weights."""

    psi: np.ndarray
    weights: np.ndarray
    method: str

    def __post_init__(self):
        if self.method not in METHOD_TAGS:
            raise ValueError(f"unknown method tag {self.method!r}")
        if not np.all(np.isfinite(self.psi)):
            raise ValueError("non-finite pseudo-outcome")
        if (self.weights < 0).any():
            raise ValueError("negative pseudo-outcome weight")


@dataclass(frozen=True)
class CateEstimate:
    """Per-observation effect estimates with optional bootstrap bounds."""

    tau_hat: np.ndarray
    method: str
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    seed: int | None = None
    config_fingerprint: str = ""


def _estimate(tau, method, seed, config) -> CateEstimate:
    return CateEstimate(
        tau_hat=np.asarray(tau, dtype=float),
        method=method,
        seed=seed,
        config_fingerprint=fingerprint(config),
    )


# --------------------------------------------------------------------------
# Fold-looped learners
# --------------------------------------------------------------------------

def s_learner(data: Dataset, plan: FoldPlan, mu_spec: StackSpec) -> CateEstimate:
    """Single-model learner: treatment enters as one extra covariate.

    Per fold, one stacked regression of y on (x, d) is fit on the training
    complement; held-out effects are the predictions with d forced to one
    minus the predictions with d forced to zero.
    """
    tau = np.empty(data.n)
    for fold in range(1, plan.k + 1):
        split = split_for_fold(plan, fold)
        tr, te = split.train_indices, split.estimate_indices
        x_aug = np.hstack([data.x[tr], data.d[tr, None].astype(float)])
        model = fit_stacked(mu_spec, x_aug, data.y[tr])
        x_te = data.x[te]
        ones = np.ones((te.shape[0], 1))
        tau[te] = (predict_stacked(model, np.hstack([x_te, ones]))
                   - predict_stacked(model, np.hstack([x_te, 0.0 * ones])))
    return _estimate(tau, "S", plan.seed,
                     {"method": "S", "mu": mu_spec.to_json_dict(), "k": plan.k})


def t_learner(data: Dataset, plan: FoldPlan, mu_spec: StackSpec,
              nuis: NuisanceEstimates | None = None) -> CateEstimate:
    """Two-model learner: arm-specific outcome fits, differenced on the held-out fold.

    Precomputed nuisances (whose mu0/mu1 are the same per-fold fits) can
    be passed to skip refitting.
    """
    if nuis is not None:
        tau = nuis.mu1_hat - nuis.mu0_hat
    else:
        tau = np.empty(data.n)
        for fold in range(1, plan.k + 1):
            split = split_for_fold(plan, fold)
            tr, te = split.train_indices, split.estimate_indices
            treated = tr[data.d[tr] == 1]
            control = tr[data.d[tr] == 0]
            m1 = fit_stacked(mu_spec, data.x[treated], data.y[treated])
            m0 = fit_stacked(mu_spec, data.x[control], data.y[control])
            tau[te] = predict_stacked(m1, data.x[te]) - predict_stacked(m0, data.x[te])
    return _estimate(tau, "T", plan.seed,
                     {"method": "T", "mu": mu_spec.to_json_dict(), "k": plan.k})


def x_pseudo(data: Dataset, nuis: NuisanceEstimates) -> tuple[PseudoOutcome, PseudoOutcome]:
    """Imputed treatment effects per arm, NaN where the arm does not apply."""
    psi1 = np.where(data.d == 1, data.y - nuis.mu0_hat, np.nan)
    psi0 = np.where(data.d == 0, nuis.mu1_hat - data.y, np.nan)
    finite1 = np.where(np.isnan(psi1), 0.0, psi1)
    finite0 = np.where(np.isnan(psi0), 0.0, psi0)
    return (
        PseudoOutcome(psi=finite1, weights=(data.d == 1).astype(float), method="X1"),
        PseudoOutcome(psi=finite0, weights=(data.d == 0).astype(float), method="X0"),
    )


def x_learner(data: Dataset, plan: FoldPlan, mu_spec: StackSpec, t_spec: StackSpec,
              e_spec: StackSpec | None = None,
              nuis: NuisanceEstimates | None = None) -> CateEstimate:
    """Imputed-effect learner combining arm-specific second stages.

    Held-out imputed effects (observed outcome minus the predicted
    counterfactual) are assembled across folds, regressed on covariates
    separately per arm over the full sample, and blended with the
    cross-fitted propensity: tau = e * tau0 + (1 - e) * tau1. Passing
    precomputed nuisances skips the fold loop.
    """
    e_spec = mu_spec if e_spec is None else e_spec
    n = data.n
    if nuis is not None:
        e_hat = nuis.e_hat
        mu0_te = nuis.mu0_hat
        mu1_te = nuis.mu1_hat
    else:
        e_hat = np.empty(n)
        mu0_te = np.empty(n)
        mu1_te = np.empty(n)
        for fold in range(1, plan.k + 1):
            split = split_for_fold(plan, fold)
            tr, te = split.train_indices, split.estimate_indices
            treated = tr[data.d[tr] == 1]
            control = tr[data.d[tr] == 0]
            m1 = fit_stacked(mu_spec, data.x[treated], data.y[treated])
            m0 = fit_stacked(mu_spec, data.x[control], data.y[control])
            e_model = fit_stacked(e_spec, data.x[tr], data.d[tr].astype(float))
            e_hat[te] = predict_stacked_probability(e_model, data.x[te])
            mu0_te[te] = predict_stacked(m0, data.x[te])
            mu1_te[te] = predict_stacked(m1, data.x[te])

    is_t = data.d == 1
    psi1 = data.y[is_t] - mu0_te[is_t]
    psi0 = mu1_te[~is_t] - data.y[~is_t]
    t1 = fit_stacked(t_spec, data.x[is_t], psi1)
    t0 = fit_stacked(t_spec, data.x[~is_t], psi0)
    tau = e_hat * predict_stacked(t0, data.x) + (1.0 - e_hat) * predict_stacked(t1, data.x)
    return _estimate(tau, "X", plan.seed, {
        "method": "X", "mu": mu_spec.to_json_dict(),
        "t": t_spec.to_json_dict(), "k": plan.k,
    })


# --------------------------------------------------------------------------
# Pseudo-outcomes (Table-2 transformations)
# --------------------------------------------------------------------------

def dr_pseudo(data: Dataset, nuis: NuisanceEstimates) -> PseudoOutcome:
    """Doubly robust score: outcome-model difference plus IPW-corrected residuals."""
    e = nuis.e_hat
    d = data.d.astype(float)
    psi = (nuis.mu1_hat - nuis.mu0_hat
           + d * (data.y - nuis.mu1_hat) / e
           - (1.0 - d) * (data.y - nuis.mu0_hat) / (1.0 - e))
    return PseudoOutcome(psi=psi, weights=np.ones(data.n), method="DR")


def r_pseudo(data: Dataset, nuis: NuisanceEstimates) -> PseudoOutcome:
    """Residual-on-residual score with squared-residual weights."""
    e = nuis.e_hat
    d = data.d.astype(float)
    denom = d - e
    psi = (data.y - nuis.mu_hat) / denom
    return PseudoOutcome(psi=psi, weights=denom ** 2, method="R")


def ipw_pseudo(data: Dataset, nuis: NuisanceEstimates) -> PseudoOutcome:
    """Inverse probability weighted transformed outcome."""
    e = nuis.e_hat
    d = data.d.astype(float)
    psi = d * data.y / e - (1.0 - d) * data.y / (1.0 - e)
    return PseudoOutcome(psi=psi, weights=np.ones(data.n), method="IPW")


# --------------------------------------------------------------------------
# Second-stage regressions
# --------------------------------------------------------------------------

def _half_crossfit_predictions(pseudo: PseudoOutcome, x: np.ndarray,
                               t_spec: StackSpec, train_half: np.ndarray,
                               predict_half: np.ndarray, n_subfolds: int) -> np.ndarray:
    """Matrix (n_subfolds, len(predict_half)): one regressor per training subfold."""
    preds = np.empty((n_subfolds, predict_half.shape[0]))
    for sub in range(n_subfolds):
        rows = train_half[sub::n_subfolds]
        w = pseudo.weights[rows]
        w_arg = None if np.allclose(w, 1.0) else w
        model = fit_stacked(t_spec, x[rows], pseudo.psi[rows], w_arg)
        preds[sub] = predict_stacked(model, x[predict_half])
    return preds


def second_stage_crossfit(pseudo: PseudoOutcome, x, t_spec: StackSpec,
                          seed: int, n_subfolds: int = 5) -> CateEstimate:
    """Two-step second stage: random halves, 5 subfold regressors, averaged.

    One half is split into `n_subfolds` parts; each part trains a stacked
    regressor of psi on x (weighted), every regressor predicts the whole
    other half, and the predictions are averaged. Roles then swap so every
    observation is scored out-of-sample. Falls back to the in-sample fit
    with a warning below 20 observations.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = pseudo.psi.shape[0]
    if x.shape[0] != n:
        raise ValueError("pseudo-outcome and covariates misaligned")
    if n < 20:
        warnings.warn("fewer than 20 observations: falling back to in-sample second stage")
        est = in_sample_second_stage(pseudo, x, t_spec)
        return replace(est, seed=seed)
    perm = rng_stream(seed, 5).permutation(n)
    half_a, half_b = perm[: n // 2], perm[n // 2:]
    tau = np.empty(n)
    for train_half, predict_half in ((half_a, half_b), (half_b, half_a)):
        preds = _half_crossfit_predictions(pseudo, x, t_spec, train_half,
                                           predict_half, n_subfolds)
        tau[predict_half] = preds.mean(axis=0)
    return _estimate(tau, pseudo.method, seed, {
        "method": pseudo.method, "stage": "crossfit",
        "t": t_spec.to_json_dict(), "subfolds": n_subfolds,
    })


def in_sample_second_stage(pseudo: PseudoOutcome, x, t_spec: StackSpec) -> CateEstimate:
    """Single weighted regression of psi on x, fit and predicted on all rows."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    w = pseudo.weights
    w_arg = None if np.allclose(w, 1.0) else w
    model = fit_stacked(t_spec, x, pseudo.psi, w_arg)
    tau = predict_stacked(model, x)
    return _estimate(tau, pseudo.method, t_spec.seed, {
        "method": pseudo.method, "stage": "in_sample", "t": t_spec.to_json_dict(),
    })


# --------------------------------------------------------------------------
# Pseudo-outcome learner drivers
# --------------------------------------------------------------------------

def _pseudo_driver(pseudo_fn, data: Dataset, plan: FoldPlan, e_spec: StackSpec,
                   mu_spec: StackSpec, t_spec: StackSpec, cross_fit: bool,
                   seed: int, nuis: NuisanceEstimates | None,
                   clip_epsilon: float) -> CateEstimate:
    if nuis is None:
        nuis = crossfit_nuisances(data, plan, e_spec, mu_spec, clip_epsilon)
    pseudo = pseudo_fn(data, nuis)
    if cross_fit:
        return second_stage_crossfit(pseudo, data.x, t_spec, seed)
    return in_sample_second_stage(pseudo, data.x, t_spec)


def dr_learner(data, plan, e_spec, mu_spec, t_spec, cross_fit: bool = True,
               seed: int = 0, nuis=None, clip_epsilon: float = 0.01) -> CateEstimate:
    """DR pseudo-outcome plus second-stage regression (cross-fit by default)."""
    return _pseudo_driver(dr_pseudo, data, plan, e_spec, mu_spec, t_spec,
                          cross_fit, seed, nuis, clip_epsilon)


def r_learner(data, plan, e_spec, mu_spec, t_spec, cross_fit: bool = True,
              seed: int = 0, nuis=None, clip_epsilon: float = 0.01) -> CateEstimate:
    """R pseudo-outcome with squared-residual weights plus second stage."""
    return _pseudo_driver(r_pseudo, data, plan, e_spec, mu_spec, t_spec,
                          cross_fit, seed, nuis, clip_epsilon)


def ipw_learner(data, plan, e_spec, mu_spec, t_spec, cross_fit: bool = True,
                seed: int = 0, nuis=None, clip_epsilon: float = 0.01) -> CateEstimate:
    """IPW transformed outcome plus second-stage regression."""
    return _pseudo_driver(ipw_pseudo, data, plan, e_spec, mu_spec, t_spec,
                          cross_fit, seed, nuis, clip_epsilon)


def export_cate_csv(cate: CateEstimate, path) -> None:
    """Write (id, tau_hat[, lower, upper], method) rows."""
    has_ci = cate.lower is not None and cate.upper is not None
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["id", "tau_hat"] + (["lower", "upper"] if has_ci else []) + ["method"]
        writer.writerow(header)
        for i in range(cate.tau_hat.shape[0]):
            row = [str(i), fmt_float(cate.tau_hat[i])]
            if has_ci:
                row += [fmt_float(cate.lower[i]), fmt_float(cate.upper[i])]
            row.append(cate.method)
            writer.writerow(row)


def load_cate_csv(path) -> CateEstimate:
    """Read a CateEstimate written by export_cate_csv."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        has_ci = "lower" in header
        tau, lower, upper, method = [], [], [], ""
        for record in reader:
            row = dict(zip(header, record))
            tau.append(float(row["tau_hat"]))
            if has_ci:
                lower.append(float(row["lower"]))
                upper.append(float(row["upper"]))
            method = row["method"]
    return CateEstimate(
        tau_hat=np.array(tau),
        method=method,
        lower=np.array(lower) if has_ci else None,
        upper=np.array(upper) if has_ci else None,
    )
