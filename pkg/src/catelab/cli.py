"""Batch pipeline driver: simulate | fit | analyze | bootstrap | figure3.

Each subcommand reads/writes CSV and JSON files; numeric output uses 17
significant digits so reruns under one master seed are byte-identical.
Exit codes: 0 success, 1 usage error, 2 data validation error,
3 estimation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from .causal_forest import CausalForestParams, causal_forest_learner
from .dataset import (DataValidationError, load_csv, make_folds, one_hot_encode,
                      make_dataset, save_csv)
from .inference import (ate_summary, bootstrap_ci, clan, export_balance_csv,
                        export_clan_csv, export_correlation_csv,
                        export_sorted_effects_csv, ipw_balance,
                        make_bootstrap_estimator, method_correlation,
                        sorted_effects)
from .metalearners import (CateEstimate, dr_learner, export_cate_csv,
                           ipw_learner, load_cate_csv, r_learner, s_learner,
                           t_learner, x_learner)
from .nuisance import crossfit_nuisances, export_nuisances_csv, overlap_report
from .simulation import DgpConfig, evaluate_mse, figure3_experiment, gen_dgp
from .stacking import StackSpec
from .learners import LearnerSpec
from .util import derive_seed, fmt_float

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ESTIMATION = 3

METHODS = ("S", "T", "X", "DR", "R", "IPW", "CF")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class UsageError(Exception):
    pass


def _default_stack(seed: int) -> StackSpec:
    return StackSpec(
        members=(
            LearnerSpec(kind="gradient_boosting", n_rounds=80, max_depth=3, seed=seed),
            LearnerSpec(kind="ridge", penalty=1.0, seed=seed),
        ),
        cv_folds=10,
        seed=seed,
    )


def _stack_from_file(path, seed: int) -> StackSpec:
    if path is None:
        return _default_stack(seed)
    with open(path, encoding="utf-8") as fh:
        return StackSpec.from_json_dict(json.load(fh))


def _write_json(payload: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_simulate(args) -> int:
    config = DgpConfig(
        n=args.n, p=args.p,
        propensity_setting=args.propensity_setting,
        effect_setting=args.effect_setting,
        seed=args.seed,
    )
    sim = gen_dgp(config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(sim.data, out / "data.csv")
    with open(out / "truth.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true_tau", "true_e", "true_mu0"])
        for i in range(sim.data.n):
            writer.writerow([fmt_float(sim.true_tau[i]), fmt_float(sim.true_e[i]),
                             fmt_float(sim.true_mu0[i])])
    _write_json(config.to_json_dict(), out / "config.json")
    print(f"wrote {out / 'data.csv'}, {out / 'truth.csv'}, {out / 'config.json'}")
    return EXIT_OK


def _load_input(args):
    data = load_csv(args.data, args.outcome_col, args.treatment_col)
    if getattr(args, "one_hot", None):
        x, names = one_hot_encode(data.x, data.feature_names, args.one_hot)
        data = make_dataset(data.y, data.d, x, names)
    return data


def cmd_fit(args) -> int:
    methods = [m.strip().upper() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise UsageError(f"unknown methods: {', '.join(unknown)};"
                         f" choose from {', '.join(METHODS)}")
    if not methods:
        raise UsageError("no methods requested")

    data = _load_input(args)
    truth = None
    if args.truth:
        truth = np.loadtxt(args.truth, delimiter=",", skiprows=1, usecols=0, ndmin=1)
        if truth.shape[0] != data.n:
            raise DataValidationError("truth file row count does not match data")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plan = make_folds(data.n, args.k, derive_seed(args.seed, 10))
    e_spec = _stack_from_file(args.e_spec, derive_seed(args.seed, 11))
    mu_spec = _stack_from_file(args.mu_spec, derive_seed(args.seed, 12))
    t_spec = _stack_from_file(args.t_spec, derive_seed(args.seed, 13))

    needs_nuisance = bool(set(methods) & {"T", "X", "DR", "R", "IPW", "CF"})
    nuis = None
    report: dict = {"seed": args.seed, "k": args.k, "methods": {}, "n": data.n,
                    "p": data.p, "clip_epsilon": args.clip_epsilon}
    if needs_nuisance:
        nuis = crossfit_nuisances(data, plan, e_spec, mu_spec, args.clip_epsilon)
        export_nuisances_csv(nuis, out / "nuisances.csv")
        ov = overlap_report(nuis.e_hat_raw, args.clip_epsilon)
        report["overlap"] = {
            "clipped_low": ov.n_clipped_low,
            "clipped_high": ov.n_clipped_high,
            "e_min": ov.minimum,
            "e_max": ov.maximum,
        }
        report["stack_weights"] = {
            name: {spec.members[j].kind: float(w[j]) for j in range(len(w))}
            for name, w, spec in (
                ("e", nuis.stack_weights["e"], e_spec),
                ("mu", nuis.stack_weights["mu"], mu_spec),
                ("mu0", nuis.stack_weights["mu0"], mu_spec),
                ("mu1", nuis.stack_weights["mu1"], mu_spec),
            )
        } if nuis.stack_weights else {}

    failures = []
    for method in methods:
        started = time.perf_counter()
        try:
            if method == "S":
                cate = s_learner(data, plan, mu_spec)
            elif method == "T":
                cate = t_learner(data, plan, mu_spec, nuis=nuis)
            elif method == "X":
                cate = x_learner(data, plan, mu_spec, t_spec, e_spec=e_spec, nuis=nuis)
            elif method == "DR":
                cate = dr_learner(data, plan, e_spec, mu_spec, t_spec,
                                  cross_fit=not args.in_sample,
                                  seed=derive_seed(args.seed, 14), nuis=nuis)
            elif method == "R":
                cate = r_learner(data, plan, e_spec, mu_spec, t_spec,
                                 cross_fit=not args.in_sample,
                                 seed=derive_seed(args.seed, 15), nuis=nuis)
            elif method == "IPW":
                cate = ipw_learner(data, plan, e_spec, mu_spec, t_spec,
                                   cross_fit=not args.in_sample,
                                   seed=derive_seed(args.seed, 16), nuis=nuis)
            else:
                params = CausalForestParams(n_trees=args.cf_trees,
                                            seed=derive_seed(args.seed, 17))
                cate = causal_forest_learner(data, plan, params, nuis)
        except Exception as exc:  # estimator failure: skip, record
            failures.append(method)
            report["methods"][method] = {"error": str(exc)}
            continue
        export_cate_csv(cate, out / f"cate_{method}.csv")
        summary = ate_summary(cate, q=args.clan_q)
        block = {
            "ate": summary.ate,
            "least_mean": summary.least_mean,
            "most_mean": summary.most_mean,
            "seconds": round(time.perf_counter() - started, 3),
            "fingerprint": cate.config_fingerprint,
        }
        if truth is not None:
            block["mse"] = evaluate_mse(cate, truth)
        report["methods"][method] = block

    _write_json(report, out / "report.json")
    done = [m for m in methods if m not in failures]
    print(f"fitted: {', '.join(done) if done else 'none'}"
          + (f" | failed: {', '.join(failures)}" if failures else ""))
    return EXIT_ESTIMATION if not done else EXIT_OK


def cmd_analyze(args) -> int:
    data = _load_input(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cates = []
    for path in args.cate:
        p = Path(path)
        if not p.exists():
            raise DataValidationError(f"missing CATE file: {p}")
        cates.append(load_cate_csv(p))
    if not cates:
        raise UsageError("no CATE files given")

    for cate in cates:
        export_sorted_effects_csv(sorted_effects(cate),
                                  out / f"sorted_effects_{cate.method}.csv")
        report = clan(cate, data, q=args.clan_q, gamma=args.gamma)
        export_clan_csv(report, out / f"clan_{cate.method}.csv")
    if len(cates) >= 2:
        matrix, names = method_correlation(cates)
        export_correlation_csv(matrix, names, out / "correlation.csv")
    if args.nuisances:
        e_hat = np.loadtxt(args.nuisances, delimiter=",", skiprows=1,
                           usecols=0, ndmin=1)
        if e_hat.shape[0] != data.n:
            raise DataValidationError("nuisance file row count does not match data")
        export_balance_csv(ipw_balance(data, e_hat), out / "balance.csv")
    print(f"analysis tables written to {out}")
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    if args.method.upper() not in METHODS:
        raise UsageError(f"unknown method {args.method!r}")
    method = args.method.upper()
    data = _load_input(args)
    plan = make_folds(data.n, args.k, derive_seed(args.seed, 10))
    e_spec = _stack_from_file(args.e_spec, derive_seed(args.seed, 11))
    mu_spec = _stack_from_file(args.mu_spec, derive_seed(args.seed, 12))
    t_spec = _stack_from_file(args.t_spec, derive_seed(args.seed, 13))
    estimator = make_bootstrap_estimator(method, e_spec=e_spec, mu_spec=mu_spec,
                                         t_spec=t_spec, k=args.k,
                                         clip_epsilon=args.clip_epsilon)
    result = bootstrap_ci(estimator, data, plan, b=args.replications,
                          alpha=args.alpha, seed=derive_seed(args.seed, 18),
                          ci_method=args.ci_method)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cate = CateEstimate(tau_hat=result.tau_hat, method=method, lower=result.lower,
                        upper=result.upper, seed=args.seed)
    export_cate_csv(cate, out / f"cate_{method}_ci.csv")
    _write_json({
        "method": method, "B": result.b_total, "dropped": result.b_dropped,
        "alpha": result.alpha, "seed": args.seed,
    }, out / f"bootstrap_{method}.json")
    print(f"bootstrap bands written to {out / f'cate_{method}_ci.csv'}"
          f" ({result.b_dropped}/{result.b_total} replicates dropped)")
    return EXIT_OK


def cmd_figure3(args) -> int:
    pairs = figure3_experiment(replications=args.replications, seed=args.seed,
                               n=args.n, p=args.p)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "figure3.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replication", "mse_single", "mse_crossfit"])
        for i, (single, crossfit) in enumerate(pairs):
            writer.writerow([str(i), fmt_float(single), fmt_float(crossfit)])
    arr = np.asarray(pairs)
    summary = {
        "replications": args.replications,
        "win_rate_crossfit": float((arr[:, 1] < arr[:, 0]).mean()),
        "var_single": float(arr[:, 0].var()),
        "var_crossfit": float(arr[:, 1].var()),
        "median_single": float(np.median(arr[:, 0])),
        "median_crossfit": float(np.median(arr[:, 1])),
    }
    _write_json(summary, out / "figure3_summary.json")
    print(f"cross-fit beats single estimate in {summary['win_rate_crossfit']:.0%}"
          f" of {args.replications} replications")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="catelab",
                     description="CATE estimation pipeline over CSV files",
                     epilog="CATELAB_THREADS caps bootstrap replicate "
                            "parallelism (default 1).")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a dataset with known effects")
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--p", type=int, default=20)
    sim.add_argument("--propensity-setting", type=int, default=1, choices=(1, 2))
    sim.add_argument("--effect-setting", type=int, default=1, choices=(1, 2))
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out-dir", required=True)
    sim.set_defaults(func=cmd_simulate)

    def add_data_args(p):
        p.add_argument("--data", required=True)
        p.add_argument("--outcome-col", default="y")
        p.add_argument("--treatment-col", default="d")
        p.add_argument("--one-hot", nargs="*", default=None,
                       help="categorical columns to expand into dummies")

    def add_spec_args(p):
        p.add_argument("--e-spec", help="JSON stack spec for the propensity")
        p.add_argument("--mu-spec", help="JSON stack spec for outcome means")
        p.add_argument("--t-spec", help="JSON stack spec for second stages")
        p.add_argument("--k", type=int, default=5)
        p.add_argument("--clip-epsilon", type=float, default=0.01)
        p.add_argument("--seed", type=int, default=0)

    fit_p = sub.add_parser("fit", help="estimate effects with chosen methods")
    add_data_args(fit_p)
    add_spec_args(fit_p)
    fit_p.add_argument("--methods", default="T",
                       help=f"comma-separated subset of {','.join(METHODS)}")
    fit_p.add_argument("--truth", help="truth.csv for MSE reporting")
    fit_p.add_argument("--in-sample", action="store_true",
                       help="in-sample second stage for DR/R/IPW")
    fit_p.add_argument("--cf-trees", type=int, default=500)
    fit_p.add_argument("--clan-q", type=float, default=0.2)
    fit_p.add_argument("--out-dir", required=True)
    fit_p.set_defaults(func=cmd_fit)

    ana = sub.add_parser("analyze", help="subgroup, correlation and balance tables")
    add_data_args(ana)
    ana.add_argument("--cate", nargs="+", required=True,
                     help="cate_<method>.csv files from fit")
    ana.add_argument("--nuisances", help="nuisances.csv from fit (for balance)")
    ana.add_argument("--clan-q", type=float, default=0.2)
    ana.add_argument("--gamma", type=float, default=0.9)
    ana.add_argument("--out-dir", required=True)
    ana.set_defaults(func=cmd_analyze)

    boot = sub.add_parser("bootstrap", help="bootstrap confidence bands")
    add_data_args(boot)
    add_spec_args(boot)
    boot.add_argument("--method", default="T")
    boot.add_argument("--replications", "-B", type=int, default=500)
    boot.add_argument("--alpha", type=float, default=0.05)
    boot.add_argument("--ci-method", default="normal", choices=("normal", "percentile"))
    boot.add_argument("--out-dir", required=True)
    boot.set_defaults(func=cmd_bootstrap)

    fig = sub.add_parser("figure3", help="cross-fit vs single-estimate benchmark")
    fig.add_argument("--replications", type=int, default=50)
    fig.add_argument("--n", type=int, default=2000)
    fig.add_argument("--p", type=int, default=10)
    fig.add_argument("--seed", type=int, default=0)
    fig.add_argument("--out-dir", required=True)
    fig.set_defaults(func=cmd_figure3)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataValidationError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (RuntimeError, ValueError, OSError) as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
