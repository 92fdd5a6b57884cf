"""Synthetic data with known treatment effects for validating estimators.

The generating model is a partially linear design: Y = tau(X) * D + mu0(X) + U.
Covariates are multivariate normal under a random correlation matrix, with
the fifth column replaced by a four-valued discrete variable. Treatment is
either a fair coin (setting 1) or driven by covariate interactions through
the normal CDF (setting 2); the effect is linear (setting 1) or built from
sine/cosine terms (setting 2).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .dataset import Dataset, DataValidationError, make_dataset
from .util import derive_seed, norm_cdf, rng_stream

X5_SUPPORT = (-0.2, 0.0, 0.2, 0.6)


@dataclass(frozen=True)
class DgpConfig:
    """Knobs of the generating process; settings select treatment/effect forms."""

    n: int
    p: int = 20
    propensity_setting: int = 1
    effect_setting: int = 1
    noise_sd_u: float = 1.0
    noise_sd_v: float = 1.0  # implicit: D - e(X) plays this role for binary D
    noise_sd_w: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n < 50:
            raise DataValidationError(f"n must be >= 50, got {self.n}")
        if self.p < 5:
            raise DataValidationError(f"p must be >= 5, got {self.p}")
        if self.propensity_setting not in (1, 2):
            raise DataValidationError("propensity_setting must be 1 or 2")
        if self.effect_setting not in (1, 2):
            raise DataValidationError("effect_setting must be 1 or 2")
        for name in ("noise_sd_u", "noise_sd_v", "noise_sd_w"):
            if getattr(self, name) < 0:
                raise DataValidationError(f"{name} must be >= 0")

    def to_json_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SimulatedDataset:
    """A Dataset plus the generating truths needed for MSE evaluation."""

    data: Dataset
    true_tau: np.ndarray
    true_e: np.ndarray
    true_mu0: np.ndarray
    sigma: np.ndarray
    config: DgpConfig | None = None


def gen_covariates(n: int, p: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Correlated normal covariates; column 5 is discrete over X5_SUPPORT.

    The correlation matrix comes from scaling A @ A.T + p * I (A standard
    normal) to unit diagonal, a positive definite stand-in for a uniform
    draw over correlation matrices.
    """
    if p < 2:
        raise ValueError("p must be >= 2")
    rng = rng_stream(seed, 0)
    a = rng.standard_normal((p, p))
    raw = a @ a.T + p * np.eye(p)
    scale = np.sqrt(np.diag(raw))
    sigma = raw / np.outer(scale, scale)
    chol = np.linalg.cholesky(sigma)
    x = rng.standard_normal((n, p)) @ chol.T
    if p >= 5:
        x[:, 4] = rng.choice(X5_SUPPORT, size=n)
    return x, sigma


def mu0_fn(x) -> np.ndarray:
    """Baseline outcome surface: x1*x2 + x3*x4 + x5 (rowwise)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] < 5:
        raise ValueError("mu0_fn needs p >= 5")
    out = x[:, 0] * x[:, 1] + x[:, 2] * x[:, 3] + x[:, 4]
    return out if out.shape[0] > 1 else float(out[0])


def gen_propensity(x, setting: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Propensity scores and a Bernoulli treatment draw.

    Setting 1 is a fair coin. Setting 2 standardizes a = x1*x2 + x3*x4
    and passes it through the standard normal CDF.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    if x.shape[1] < 4:
        raise ValueError("gen_propensity needs p >= 4")
    rng = rng_stream(seed, 1)
    if setting == 1:
        e = np.full(n, 0.5)
    elif setting == 2:
        a = x[:, 0] * x[:, 1] + x[:, 2] * x[:, 3]
        sd = a.std()
        if sd == 0.0:
            raise DataValidationError("degenerate propensity: sd(a) = 0")
        e = norm_cdf((a - a.mean()) / sd)
    else:
        raise ValueError("setting must be 1 or 2")
    d = (rng.random(n) < e).astype(int)
    return e, d


def gen_effect(x, setting: int, seed: int, noise_sd_w: float = 0.5) -> np.ndarray:
    """Per-observation treatment effects.

    Setting 1: 0.6*(x1+x2+x3+x4) + x5 + W with W ~ N(0, noise_sd_w^2).
    Setting 2 (no noise term): sin(x1*1 + x2/2 + x3/3) + 1.5*cos(x4) + x5.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] < 5:
        raise ValueError("gen_effect needs p >= 5")
    if setting == 1:
        rng = rng_stream(seed, 2)
        w = rng.normal(0.0, noise_sd_w, x.shape[0])
        return 0.6 * (x[:, 0] + x[:, 1] + x[:, 2] + x[:, 3]) + x[:, 4] + w
    if setting == 2:
        b = 1.0 / np.arange(1, 4)
        return np.sin(x[:, :3] @ b) + 1.5 * np.cos(x[:, 3]) + x[:, 4]
    raise ValueError("setting must be 1 or 2")


def gen_dgp(config: DgpConfig, force_d: int | None = None) -> SimulatedDataset:
    """Assemble a simulated dataset with stored truths.

    force_d overrides the treatment column with a constant (debug only;
    such data fails the both-arms invariant and cannot feed estimators).
    """
    x, sigma = gen_covariates(config.n, config.p, derive_seed(config.seed, 1))
    e, d = gen_propensity(x, config.propensity_setting, derive_seed(config.seed, 2))
    tau = gen_effect(x, config.effect_setting, derive_seed(config.seed, 3),
                     config.noise_sd_w)
    mu0 = mu0_fn(x)
    u = rng_stream(derive_seed(config.seed, 4), 3).normal(0.0, config.noise_sd_u, config.n)
    if force_d is not None:
        d = np.full(config.n, int(force_d))
    y = tau * d + mu0 + u
    data = make_dataset(y, d, x, _require_both_arms=force_d is None)
    return SimulatedDataset(data=data, true_tau=tau, true_e=e, true_mu0=mu0,
                            sigma=sigma, config=config)


def evaluate_mse(estimate, truth) -> float:
    """Mean squared deviation between an estimate vector and the truth."""
    est = np.asarray(getattr(estimate, "tau_hat", estimate), dtype=float).reshape(-1)
    tru = np.asarray(truth, dtype=float).reshape(-1)
    if est.shape[0] != tru.shape[0]:
        raise ValueError(f"length mismatch: {est.shape[0]} vs {tru.shape[0]}")
    return float(np.mean((est - tru) ** 2))


def figure3_experiment(replications: int, seed: int, e_spec=None, mu_spec=None,
                       t_spec=None, n: int = 2000, p: int = 10,
                       k: int = 5) -> list[tuple[float, float]]:
    """Paired (in-sample MSE, cross-fit MSE) of the R-learner on the RCT benchmark.

    Each replication draws a fresh dataset, cross-fits the nuisances once,
    and runs the second stage both ways on the same pseudo-outcomes.
    """
    from .dataset import make_folds
    from .metalearners import in_sample_second_stage, r_pseudo, second_stage_crossfit
    from .nuisance import crossfit_nuisances

    if replications < 10:
        raise ValueError("need at least 10 replications")
    if e_spec is None or mu_spec is None or t_spec is None:
        from .learners import LearnerSpec
        from .stacking import single_learner_stack
        boost = LearnerSpec(kind="gradient_boosting", n_rounds=60, max_depth=2, seed=11)
        e_spec = e_spec or single_learner_stack(boost)
        mu_spec = mu_spec or single_learner_stack(boost)
        t_spec = t_spec or single_learner_stack(
            LearnerSpec(kind="gradient_boosting", n_rounds=100, max_depth=3, seed=12))

    pairs = []
    for rep in range(replications):
        rep_seed = derive_seed(seed, 5, rep)
        sim = figure3_dgp(n, p, rep_seed)
        plan = make_folds(n, k, derive_seed(rep_seed, 6))
        nuis = crossfit_nuisances(sim.data, plan, e_spec, mu_spec)
        pseudo = r_pseudo(sim.data, nuis)
        single = in_sample_second_stage(pseudo, sim.data.x, t_spec)
        crossfit = second_stage_crossfit(pseudo, sim.data.x, t_spec,
                                         derive_seed(rep_seed, 7))
        pairs.append((evaluate_mse(single, sim.true_tau),
                      evaluate_mse(crossfit, sim.true_tau)))
    return pairs


def figure3_dgp(n: int, p: int, seed: int) -> SimulatedDataset:
    """RCT benchmark: iid normal covariates, e = 0.5, kinked linear effect.

    tau(x) = x1 + 1{x2 > 0} + W with W ~ N(0, 0.5); the baseline surface
    reuses the interaction form x1*x2 + x3*x4 + x5 (all columns continuous
    here).
    """
    rng = rng_stream(seed, 4)
    x = rng.standard_normal((n, p))
    e = np.full(n, 0.5)
    d = (rng.random(n) < e).astype(int)
    w = rng.normal(0.0, 0.5, n)
    tau = x[:, 0] + (x[:, 1] > 0).astype(float) + w
    mu0 = x[:, 0] * x[:, 1] + x[:, 2] * x[:, 3] + x[:, 4]
    y = tau * d + mu0 + rng.normal(0.0, 1.0, n)
    data = make_dataset(y, d, x)
    return SimulatedDataset(data=data, true_tau=tau, true_e=e, true_mu0=mu0,
                            sigma=np.eye(p), config=None)
