"""Command-line entry point with fit / predict / simulate / superconduct.

All numeric outputs are written as JSON/CSV so external tooling can plot
them; file writes are atomic (temp file + rename).  Exit codes: 0 success,
1 module error, 2 invalid configuration.  MOE_SEED overrides the default
seed; --config points at a flat KEY=VALUE file whose entries are overridden
by explicit flags.
"""

import argparse
import json
import os
import sys
import tempfile
import time
from dataclasses import replace

import numpy as np

from . import superconduct as sc
from .debias import DebiasConfig, debias_all
from .em import EMConfig, fit_em
from .errors import ContractViolationError
from .model import Dataset, MoEParams, responsibilities
from .predset import build_prediction_set, default_delta
from .simulate import SCENARIOS, run_coverage
from .em import FitResult


def atomic_write_text(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def atomic_write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_config_file(path):
    """Flat KEY=VALUE lines; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ContractViolationError(f"bad config line: {line!r}")
            key, val = line.split("=", 1)
            out[key.strip().replace("-", "_")] = val.strip()
    return out


def default_seed():
    env = os.environ.get("MOE_SEED")
    return int(env) if env else 0


def load_table_dataset(path, add_intercept=True):
    """Numeric CSV with header; last column is the response."""
    table = sc.load_csv(path)
    X = table.values[:, :-1]
    if add_intercept:
        X = np.column_stack([np.ones(X.shape[0]), X])
    return Dataset(X=X, y=table.values[:, -1]), table


def _apply_config_file(args, parser):
    if getattr(args, "config", None):
        file_vals = read_config_file(args.config)
        for key, val in file_vals.items():
            if hasattr(args, key) and parser.get_default(key) == getattr(args, key):
                cur = parser.get_default(key)
                if isinstance(cur, bool):
                    setattr(args, key, val.lower() in ("1", "true", "yes"))
                elif isinstance(cur, int):
                    setattr(args, key, int(val))
                elif isinstance(cur, float):
                    setattr(args, key, float(val))
                else:
                    setattr(args, key, val)
    return args


def _fit_result_dict(fit: FitResult, add_intercept, seed):
    return {
        "model": fit.params.to_dict(),
        "converged": bool(fit.converged),
        "restart_index": fit.restart_index,
        "n_iter": fit.n_iter,
        "final_objective": float(fit.objective_trace[-1]),
        "lambda_beta": fit.lambda_beta,
        "lambda_alpha": fit.lambda_alpha,
        "add_intercept": bool(add_intercept),
        "seed": seed,
    }


def cmd_fit(args):
    data, _ = load_table_dataset(args.data, add_intercept=not args.no_intercept)
    cfg = EMConfig(
        lambda_beta=args.lambda_beta,
        lambda_alpha=args.lambda_alpha,
        max_iter=args.max_iter,
        tol=args.tol,
        n_restarts=args.restarts,
        sigma_floor=args.sigma_floor,
        rng_seed=args.seed,
        penalize_intercept=args.penalize_intercept,
    )
    fit = fit_em(data, args.k, cfg)
    out = dict(_fit_result_dict(fit, not args.no_intercept, args.seed))
    out["config"] = _config_echo(args)
    out["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    atomic_write_json(args.out, out)
    trace_path = args.trace or os.path.splitext(args.out)[0] + "_trace.csv"
    lines = ["iteration,q_objective"]
    lines += [f"{i},{v!r}" for i, v in enumerate(fit.objective_trace)]
    atomic_write_text(trace_path, "\n".join(lines) + "\n")
    return 0


def cmd_predict(args):
    with open(args.model) as fh:
        saved = json.load(fh)
    params = MoEParams.from_dict(saved["model"])
    add_intercept = bool(saved.get("add_intercept", True))
    data, _ = load_table_dataset(args.data, add_intercept=add_intercept)
    if not 0.0 < args.q < 1.0:
        raise ContractViolationError("q must be in (0, 1)")

    x_new = np.array([float(v) for v in args.x_new.split(",")])
    if add_intercept:
        x_new = np.concatenate([[1.0], x_new])
    if x_new.size != params.p:
        raise ContractViolationError(
            f"x_new has {x_new.size} entries, model expects {params.p}"
        )

    G = responsibilities(params, data)
    fit = FitResult(
        params=params,
        responsibilities=G,
        objective_trace=np.array([0.0]),
        converged=bool(saved.get("converged", True)),
        restart_index=0,
    )
    db_cfg = DebiasConfig(
        lambda_k=args.lambda_k,
        L=args.l1_budget,
        use_sample_splitting=args.sample_splitting,
        rng_seed=args.seed,
    )
    db = debias_all(data, fit, x_new, db_cfg)
    delta = args.delta if args.delta else default_delta(db, args.q, args.hdr_gamma)
    ps = build_prediction_set(db, args.q, delta)
    out = ps.to_dict()
    out["centers"] = db.gamma_d.tolist()
    out["scales"] = db.b.tolist()
    out["weights"] = db.pi_new.tolist()
    out["config"] = _config_echo(args)
    out["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    atomic_write_json(args.out, out)
    return 0


def cmd_simulate(args):
    if args.scenario not in SCENARIOS:
        raise ContractViolationError(
            f"unknown scenario {args.scenario!r}; valid: {sorted(SCENARIOS)}"
        )
    scn = SCENARIOS[args.scenario](
        replications=args.replications, n_ynew=args.n_ynew, rng_seed=args.seed
    )
    em_cfg = EMConfig(
        lambda_beta=args.lambda_beta,
        lambda_alpha=args.lambda_alpha,
        n_restarts=args.restarts,
        max_iter=args.max_iter,
        rng_seed=args.seed,
    )
    db_cfg = DebiasConfig(lambda_k=args.lambda_k, rng_seed=args.seed)
    report = run_coverage(
        scn, em_cfg, db_cfg, oracle=args.oracle, n_jobs=args.threads
    )
    base = args.out or f"{args.scenario}_coverage"
    report.write_csv(base + ".csv")
    payload = report.to_json_dict()
    payload["config"] = _config_echo(args)
    payload["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    atomic_write_json(base + ".json", payload)
    return 0


def cmd_superconduct(args):
    table = sc.load_csv(args.data)
    split = sc.SplitSpec(
        n_train=args.n_train, n_validation=args.n_validation, rng_seed=args.seed
    )
    em_cfg = EMConfig(
        n_restarts=args.restarts, max_iter=args.max_iter, rng_seed=args.seed
    )
    db_cfg = DebiasConfig(rng_seed=args.seed)
    grid = None
    if args.cv_grid:
        na, nb = (int(v) for v in args.cv_grid.split(","))
        grid = sc.default_lambda_grid(na, nb)
    k_candidates = tuple(int(v) for v in args.k_candidates.split(","))
    report, evaluation, prep, _fit = sc.run_pipeline(
        table,
        split,
        q=args.q,
        k_candidates=k_candidates,
        fixed_k=args.k,
        em_cfg=em_cfg,
        db_cfg=db_cfg,
        lambda_grid=grid,
        folds=args.folds,
        n_bins=args.bins,
        subgroup_var=args.subgroup_var,
    )
    report["config"] = _config_echo(args)
    report["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    atomic_write_json(args.out, report)
    rows_path = os.path.splitext(args.out)[0] + "_rows.csv"
    lines = ["row,contained,raw_length,n_intervals,intervals"]
    for r in evaluation.rows:
        ivals = ";".join(f"{a!r}:{b!r}" for a, b in r.intervals)
        lines.append(f"{r.row},{int(r.contained)},{r.raw_length!r},{r.n_intervals},{ivals}")
    atomic_write_text(rows_path, "\n".join(lines) + "\n")
    return 0


def _config_echo(args):
    skip = {"func", "config"}
    return {
        k: v for k, v in sorted(vars(args).items()) if k not in skip
    }


def build_parser():
    parser = argparse.ArgumentParser(
        prog="moepred",
        description="Mixture-of-experts regression with calibrated prediction sets",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=default_seed())
        p.add_argument("--config", default=None, help="flat KEY=VALUE file")
        p.add_argument("--threads", type=int, default=1)

    p_fit = sub.add_parser("fit", help="fit the model to a CSV dataset")
    common(p_fit)
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--k", type=int, required=True)
    p_fit.add_argument("--lambda-beta", type=float, default=0.0)
    p_fit.add_argument("--lambda-alpha", type=float, default=0.0)
    p_fit.add_argument("--max-iter", type=int, default=1000)
    p_fit.add_argument("--tol", type=float, default=1e-6)
    p_fit.add_argument("--restarts", type=int, default=5)
    p_fit.add_argument("--sigma-floor", type=float, default=1e-3)
    p_fit.add_argument("--penalize-intercept", action="store_true")
    p_fit.add_argument("--no-intercept", action="store_true",
                       help="do not prepend an intercept column")
    p_fit.add_argument("--out", default="fit.json")
    p_fit.add_argument("--trace", default=None)
    p_fit.set_defaults(func=cmd_fit)

    p_pred = sub.add_parser("predict", help="prediction set at a new point")
    common(p_pred)
    p_pred.add_argument("--model", required=True, help="fit.json from `fit`")
    p_pred.add_argument("--data", required=True,
                        help="training CSV (needed for the debiasing step)")
    p_pred.add_argument("--x-new", required=True,
                        help="comma-separated covariates (without intercept)")
    p_pred.add_argument("--q", type=float, default=0.05)
    p_pred.add_argument("--lambda-k", type=float, default=None)
    p_pred.add_argument("--l1-budget", type=float, default=100.0)
    p_pred.add_argument("--hdr-gamma", type=float, default=0.01)
    p_pred.add_argument("--delta", type=float, default=None)
    p_pred.add_argument("--sample-splitting", action="store_true")
    p_pred.add_argument("--out", default="predset.json")
    p_pred.set_defaults(func=cmd_predict)

    p_sim = sub.add_parser("simulate", help="Monte Carlo coverage study")
    common(p_sim)
    p_sim.add_argument("scenario", help="fig1 | fig2 | fig3 | highdim")
    p_sim.add_argument("--replications", type=int, default=100)
    p_sim.add_argument("--n-ynew", type=int, default=200)
    p_sim.add_argument("--oracle", action="store_true",
                       help="use the scenario truth; skip fitting")
    p_sim.add_argument("--lambda-beta", type=float, default=0.01)
    p_sim.add_argument("--lambda-alpha", type=float, default=0.01)
    p_sim.add_argument("--lambda-k", type=float, default=None)
    p_sim.add_argument("--restarts", type=int, default=2)
    p_sim.add_argument("--max-iter", type=int, default=500)
    p_sim.add_argument("--out", default=None, help="output path prefix")
    p_sim.set_defaults(func=cmd_simulate)

    p_sc = sub.add_parser("superconduct", help="critical-temperature pipeline")
    common(p_sc)
    p_sc.add_argument("--data", required=True)
    p_sc.add_argument("--q", type=float, default=0.05)
    p_sc.add_argument("--k", type=int, default=None, help="skip K selection")
    p_sc.add_argument("--k-candidates", default="1,2,3,4,5")
    p_sc.add_argument("--n-train", type=int, default=200)
    p_sc.add_argument("--n-validation", type=int, default=1000)
    p_sc.add_argument("--folds", type=int, default=5)
    p_sc.add_argument("--cv-grid", default=None,
                      help="grid shape as 'n_alpha,n_beta' (default 10,10)")
    p_sc.add_argument("--bins", type=int, default=5)
    p_sc.add_argument("--subgroup-var", default=sc.DEFAULT_SUBGROUP_VAR)
    p_sc.add_argument("--restarts", type=int, default=3)
    p_sc.add_argument("--max-iter", type=int, default=300)
    p_sc.add_argument("--out", default="superconduct_report.json")
    p_sc.set_defaults(func=cmd_superconduct)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config_file(args, parser)
        return args.func(args)
    except ContractViolationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
