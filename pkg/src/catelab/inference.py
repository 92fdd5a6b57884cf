"""Bootstrap confidence intervals, sorted effects, CLAN, correlations, balance.

The bootstrap refits a CATE procedure on arm-stratified resamples of each
fold's training complement and predicts the held-out fold, yielding B
replicate surfaces whose pointwise spread calibrates normal-quantile
bands around the unbootstrapped estimate.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, FoldPlan, make_dataset, split_for_fold
from .metalearners import CateEstimate
from .util import fmt_float, norm_cdf, norm_ppf, rng_stream


@dataclass(frozen=True)
class BootstrapResult:
    tau_hat: np.ndarray
    sigma_hat: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    b_total: int
    b_dropped: int
    alpha: float
    seed: int
    method: str = ""

    def as_cate(self) -> CateEstimate:
        return CateEstimate(tau_hat=self.tau_hat, method=self.method,
                            lower=self.lower, upper=self.upper, seed=self.seed)


def _stratified_resample(indices: np.ndarray, d: np.ndarray,
                         rng: np.random.Generator) -> np.ndarray:
    """Resample with replacement within each treatment arm separately."""
    treated = indices[d[indices] == 1]
    control = indices[d[indices] == 0]
    boot_t = rng.choice(treated, size=treated.shape[0], replace=True)
    boot_c = rng.choice(control, size=control.shape[0], replace=True)
    return np.concatenate([boot_t, boot_c])


def bootstrap_ci(estimator, data: Dataset, plan: FoldPlan, b: int, alpha: float,
                 seed: int, ci_method: str = "normal",
                 n_threads: int | None = None) -> BootstrapResult:
    """Pointwise confidence bands for a CATE procedure.

    Args:
        estimator: callable (train: Dataset, x_test, seed) -> tau vector;
            it is refit from scratch on every bootstrap training set.
        b: replication count (>= 2).
        alpha: two-sided miscoverage level in (0, 1).
        ci_method: "normal" for tau_hat +/- q * sigma_hat, "percentile"
            for empirical replicate quantiles.
        n_threads: replicate parallelism (default: CATELAB_THREADS env
            var, else 1). Aggregation order is fixed regardless.

    A replicate in which the estimator raises is dropped and counted;
    more than 10% drops aborts.
    """
    if b < 2:
        raise ValueError("need at least 2 bootstrap replications")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if ci_method not in ("normal", "percentile"):
        raise ValueError(f"unknown ci_method {ci_method!r}")
    if n_threads is None:
        n_threads = int(os.environ.get("CATELAB_THREADS", "1"))

    folds = [split_for_fold(plan, fold) for fold in range(1, plan.k + 1)]

    tau_hat = np.empty(data.n)
    for split in folds:
        train = data.subset(split.train_indices)
        tau_hat[split.estimate_indices] = estimator(
            train, data.x[split.estimate_indices], seed
        )

    def one_replicate(rep: int) -> np.ndarray | None:
        out = np.empty(data.n)
        try:
            for fold_id, split in enumerate(folds):
                rng = rng_stream(seed, 7, rep, fold_id)
                rows = _stratified_resample(split.train_indices, data.d, rng)
                boot = make_dataset(data.y[rows], data.d[rows], data.x[rows],
                                    data.feature_names)
                out[split.estimate_indices] = estimator(
                    boot, data.x[split.estimate_indices], seed + rep + 1
                )
        except Exception:
            return None
        return out

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(one_replicate, range(b)))
    else:
        results = [one_replicate(rep) for rep in range(b)]

    kept = [r for r in results if r is not None]
    dropped = b - len(kept)
    if dropped > 0.1 * b:
        raise RuntimeError(f"{dropped}/{b} bootstrap replicates failed")
    replicates = np.stack(kept)
    sigma = replicates.std(axis=0, ddof=1)
    if ci_method == "normal":
        q = norm_ppf(1.0 - alpha / 2.0)
        lower = tau_hat - q * sigma
        upper = tau_hat + q * sigma
    else:
        lower = np.quantile(replicates, alpha / 2.0, axis=0)
        upper = np.quantile(replicates, 1.0 - alpha / 2.0, axis=0)
        lower = np.minimum(lower, tau_hat)
        upper = np.maximum(upper, tau_hat)
    return BootstrapResult(tau_hat=tau_hat, sigma_hat=sigma, lower=lower,
                           upper=upper, b_total=b, b_dropped=dropped,
                           alpha=alpha, seed=seed)


@dataclass(frozen=True)
class SortedEffects:
    """Effect estimates ordered ascending (ties keep original index order)."""

    rank: np.ndarray  # 1..n
    index: np.ndarray  # original observation ids
    tau_hat: np.ndarray
    lower: np.ndarray | None
    upper: np.ndarray | None


def sorted_effects(cate: CateEstimate) -> SortedEffects:
    order = np.argsort(cate.tau_hat, kind="stable")
    return SortedEffects(
        rank=np.arange(1, cate.tau_hat.shape[0] + 1),
        index=order,
        tau_hat=cate.tau_hat[order],
        lower=None if cate.lower is None else cate.lower[order],
        upper=None if cate.upper is None else cate.upper[order],
    )


@dataclass(frozen=True)
class ClanRow:
    covariate: str
    mean_most: float
    mean_least: float
    difference: float
    ci_lower: float
    ci_upper: float
    p_value: float


@dataclass(frozen=True)
class ClanReport:
    rows: tuple[ClanRow, ...]
    q: float
    gamma: float
    group_size: int
    most_indices: np.ndarray
    least_indices: np.ndarray


def clan(cate: CateEstimate, data: Dataset, q: float = 0.2,
         gamma: float = 0.9) -> ClanReport:
    """Covariate means of the most/least affected effect quantile groups.

    Groups are the top and bottom floor(q*n) observations by estimated
    effect. Differences carry Welch normal-approximation intervals at
    level gamma and two-sided p-values.
    """
    if not 0.0 < q <= 0.5:
        raise ValueError("q must be in (0, 0.5]")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must be in (0, 1)")
    n = cate.tau_hat.shape[0]
    if n != data.n:
        raise ValueError("estimate and dataset misaligned")
    g = int(np.floor(q * n))
    if g < 2:
        raise ValueError(f"group size {g} too small for inference")
    order = np.argsort(cate.tau_hat, kind="stable")
    least = order[:g]
    most = order[-g:]
    z = norm_ppf(1.0 - (1.0 - gamma) / 2.0)
    rows = []
    for j, name in enumerate(data.feature_names):
        a = data.x[most, j]
        b_vals = data.x[least, j]
        diff = float(a.mean() - b_vals.mean())
        se = float(np.sqrt(a.var(ddof=1) / g + b_vals.var(ddof=1) / g))
        if se == 0.0:
            p = 1.0 if diff == 0.0 else 0.0
            ci_lo = ci_hi = diff
        else:
            p = float(2.0 * (1.0 - norm_cdf(abs(diff) / se)))
            ci_lo, ci_hi = diff - z * se, diff + z * se
        rows.append(ClanRow(name, float(a.mean()), float(b_vals.mean()),
                            diff, ci_lo, ci_hi, p))
    return ClanReport(rows=tuple(rows), q=q, gamma=gamma, group_size=g,
                      most_indices=most, least_indices=least)


def method_correlation(cates: list[CateEstimate]) -> tuple[np.ndarray, list[str]]:
    """Pairwise Pearson correlation matrix of the effect estimates.

    Pairs involving a zero-variance vector get NaN off the diagonal; the
    diagonal is one by convention.
    """
    if len(cates) < 2:
        raise ValueError("need at least two methods")
    n = cates[0].tau_hat.shape[0]
    for c in cates:
        if c.tau_hat.shape[0] != n:
            raise ValueError("estimates have different lengths")
    m = len(cates)
    mat = np.eye(m)
    for i in range(m):
        for j in range(i + 1, m):
            a, b = cates[i].tau_hat, cates[j].tau_hat
            sa, sb = a.std(), b.std()
            if sa == 0.0 or sb == 0.0:
                rho = np.nan
            else:
                rho = float(np.corrcoef(a, b)[0, 1])
            mat[i, j] = mat[j, i] = rho
    return mat, [c.method for c in cates]


@dataclass(frozen=True)
class BalanceRow:
    covariate: str
    mean_treated: float
    mean_control: float
    weighted_mean_treated: float
    weighted_mean_control: float
    smd_before: float
    smd_after: float


def ipw_balance(data: Dataset, e_hat) -> tuple[BalanceRow, ...]:
    """Raw and inverse-propensity-weighted covariate means per arm.

    Treated rows are weighted by 1/e, controls by 1/(1-e). Standardized
    mean differences share the unweighted pooled standard deviation so
    before and after are comparable; a constant covariate reports zero.
    """
    e = np.asarray(e_hat, dtype=float)
    t = data.d == 1
    c = ~t
    w_t = 1.0 / e[t]
    w_c = 1.0 / (1.0 - e[c])
    rows = []
    for j, name in enumerate(data.feature_names):
        col = data.x[:, j]
        mean_t, mean_c = float(col[t].mean()), float(col[c].mean())
        wmean_t = float(np.dot(w_t, col[t]) / w_t.sum())
        wmean_c = float(np.dot(w_c, col[c]) / w_c.sum())
        pooled = np.sqrt((col[t].var(ddof=1) + col[c].var(ddof=1)) / 2.0)
        if pooled == 0.0:
            smd_before = smd_after = 0.0
        else:
            smd_before = (mean_t - mean_c) / pooled
            smd_after = (wmean_t - wmean_c) / pooled
        rows.append(BalanceRow(name, mean_t, mean_c, wmean_t, wmean_c,
                               float(smd_before), float(smd_after)))
    return tuple(rows)


@dataclass(frozen=True)
class AteSummary:
    ate: float
    least_mean: float
    most_mean: float
    q: float


def ate_summary(cate: CateEstimate, q: float = 0.2) -> AteSummary:
    """Mean effect overall and within the bottom-q / top-q groups."""
    tau = cate.tau_hat
    g = max(1, int(np.floor(q * tau.shape[0])))
    order = np.argsort(tau, kind="stable")
    return AteSummary(
        ate=float(tau.mean()),
        least_mean=float(tau[order[:g]].mean()),
        most_mean=float(tau[order[-g:]].mean()),
        q=q,
    )


def make_bootstrap_estimator(method: str, e_spec=None, mu_spec=None, t_spec=None,
                             k: int = 5, clip_epsilon: float = 0.01,
                             cf_params=None):
    """Build a (train, x_test, seed) -> tau callable for bootstrap_ci.

    Each call refits the named method from scratch on the training data:
    S/T/X fit their outcome models directly; DR/R/IPW cross-fit nuisances
    internally with k folds, then fit the second stage on all training
    pseudo-outcomes; CF fits an honest forest on internally cross-fitted
    nuisances.
    """
    from .causal_forest import CausalForestParams, fit_causal_forest, predict_cate
    from .metalearners import dr_pseudo, ipw_pseudo, r_pseudo
    from .nuisance import crossfit_nuisances
    from .stacking import fit_stacked, predict_stacked, predict_stacked_probability
    from .dataset import make_folds

    def fit_arms(train):
        treated = train.d == 1
        m1 = fit_stacked(mu_spec, train.x[treated], train.y[treated])
        m0 = fit_stacked(mu_spec, train.x[~treated], train.y[~treated])
        return m0, m1

    if method == "T":
        def estimator(train, x_test, seed):
            m0, m1 = fit_arms(train)
            return predict_stacked(m1, x_test) - predict_stacked(m0, x_test)
    elif method == "S":
        def estimator(train, x_test, seed):
            x_aug = np.hstack([train.x, train.d[:, None].astype(float)])
            model = fit_stacked(mu_spec, x_aug, train.y)
            ones = np.ones((x_test.shape[0], 1))
            return (predict_stacked(model, np.hstack([x_test, ones]))
                    - predict_stacked(model, np.hstack([x_test, 0.0 * ones])))
    elif method == "X":
        def estimator(train, x_test, seed):
            m0, m1 = fit_arms(train)
            treated = train.d == 1
            psi1 = train.y[treated] - predict_stacked(m0, train.x[treated])
            psi0 = predict_stacked(m1, train.x[~treated]) - train.y[~treated]
            t1 = fit_stacked(t_spec, train.x[treated], psi1)
            t0 = fit_stacked(t_spec, train.x[~treated], psi0)
            e_model = fit_stacked(e_spec or mu_spec, train.x, train.d.astype(float))
            e = predict_stacked_probability(e_model, x_test)
            return e * predict_stacked(t0, x_test) + (1.0 - e) * predict_stacked(t1, x_test)
    elif method in ("DR", "R", "IPW"):
        pseudo_fn = {"DR": dr_pseudo, "R": r_pseudo, "IPW": ipw_pseudo}[method]

        def estimator(train, x_test, seed):
            plan = make_folds(train.n, k, seed)
            nuis = crossfit_nuisances(train, plan, e_spec, mu_spec, clip_epsilon)
            pseudo = pseudo_fn(train, nuis)
            w = pseudo.weights
            w_arg = None if np.allclose(w, 1.0) else w
            model = fit_stacked(t_spec, train.x, pseudo.psi, w_arg)
            return predict_stacked(model, x_test)
    elif method == "CF":
        params = cf_params or CausalForestParams()

        def estimator(train, x_test, seed):
            plan = make_folds(train.n, k, seed)
            nuis = crossfit_nuisances(train, plan, e_spec, mu_spec, clip_epsilon)
            model = fit_causal_forest(train, params, nuis)
            return predict_cate(model, x_test)
    else:
        raise ValueError(f"unknown method {method!r}")
    return estimator


# --------------------------------------------------------------------------
# CSV writers for the analysis tables
# --------------------------------------------------------------------------

def export_sorted_effects_csv(table: SortedEffects, path) -> None:
    has_ci = table.lower is not None
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["rank", "id", "tau_hat"] + (["lower", "upper"] if has_ci else [])
        writer.writerow(header)
        for i in range(table.rank.shape[0]):
            row = [str(int(table.rank[i])), str(int(table.index[i])),
                   fmt_float(table.tau_hat[i])]
            if has_ci:
                row += [fmt_float(table.lower[i]), fmt_float(table.upper[i])]
            writer.writerow(row)


def export_clan_csv(report: ClanReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["covariate", "mean_most", "mean_least", "difference",
                         "ci_lower", "ci_upper", "p_value"])
        for row in report.rows:
            writer.writerow([row.covariate, fmt_float(row.mean_most),
                             fmt_float(row.mean_least), fmt_float(row.difference),
                             fmt_float(row.ci_lower), fmt_float(row.ci_upper),
                             fmt_float(row.p_value)])


def export_correlation_csv(matrix: np.ndarray, names: list[str], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", *names])
        for i, name in enumerate(names):
            writer.writerow([name, *[fmt_float(v) for v in matrix[i]]])


def export_balance_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["covariate", "mean_treated", "mean_control",
                         "weighted_mean_treated", "weighted_mean_control",
                         "smd_before", "smd_after"])
        for row in rows:
            writer.writerow([row.covariate, fmt_float(row.mean_treated),
                             fmt_float(row.mean_control),
                             fmt_float(row.weighted_mean_treated),
                             fmt_float(row.weighted_mean_control),
                             fmt_float(row.smd_before), fmt_float(row.smd_after)])
