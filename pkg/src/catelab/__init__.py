"""catelab: conditional average treatment effect estimation toolbox.

Meta-learners (S, T, X, DR, R, IPW) over stacked weighted base learners,
an honest causal forest, cross-fitted nuisance estimation, bootstrap
confidence intervals, subgroup and balance diagnostics, and a simulation
suite with known ground truth.
"""

from .dataset import (
    Dataset,
    DataValidationError,
    FoldPlan,
    TrainEstimateSplit,
    load_csv,
    make_dataset,
    make_folds,
    save_csv,
    split_for_fold,
)
from .learners import FittedModel, LearnerSpec, fit, predict, predict_probability
from .stacking import (
    StackSpec,
    StackedModel,
    fit_stacked,
    nnls,
    predict_stacked,
    predict_stacked_probability,
    single_learner_stack,
)
from .nuisance import (
    NuisanceEstimates,
    OverlapReport,
    clip_propensity,
    crossfit_nuisances,
    oracle_nuisances,
    overlap_report,
)
from .metalearners import (
    CateEstimate,
    PseudoOutcome,
    dr_learner,
    dr_pseudo,
    in_sample_second_stage,
    ipw_learner,
    ipw_pseudo,
    r_learner,
    r_pseudo,
    s_learner,
    second_stage_crossfit,
    t_learner,
    x_learner,
)
from .causal_forest import (
    CausalForestModel,
    CausalForestParams,
    CausalTree,
    causal_forest_learner,
    fit_causal_forest,
    fit_causal_tree,
    forest_from_json,
    forest_to_json,
    forest_weights,
    leaf_tau,
    local_center,
    predict_cate,
)
from .inference import (
    AteSummary,
    BootstrapResult,
    ClanReport,
    ate_summary,
    bootstrap_ci,
    clan,
    ipw_balance,
    make_bootstrap_estimator,
    method_correlation,
    sorted_effects,
)
from .simulation import (
    DgpConfig,
    SimulatedDataset,
    evaluate_mse,
    figure3_dgp,
    figure3_experiment,
    gen_covariates,
    gen_dgp,
    gen_effect,
    gen_propensity,
    mu0_fn,
)

__version__ = "0.1.0"
