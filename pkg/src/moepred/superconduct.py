"""Critical-temperature pipeline: ingest, split, pick K, score prediction sets.

The canonical dataset has 81 numeric predictor columns and the critical
temperature (Kelvin) as the last column.  The response is modeled as
log(1 + temperature); predictors are centered and scaled with training-set
statistics only.  K is chosen on a validation split by the mean squared
error of hard-assignment point predictions; prediction sets are scored on
the held-out test split, overall and within subgroups of a chosen predictor.
"""

import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ColumnCountMismatchError,
    ContractViolationError,
    MissingFileError,
    ParseError,
)
from .model import Dataset, mixture_weights
from .em import EMConfig, FitResult, cross_validate, fit_em
from .debias import DebiasConfig, debias_context, debias_at
from .predset import build_prediction_set, contains, default_delta, raw_scale_length

DEFAULT_SUBGROUP_VAR = "wtd_std_ThermalConductivity"


@dataclass(frozen=True)
class SplitSpec:
    n_train: int = 200
    n_validation: int = 1000
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_train < 1 or self.n_validation < 0:
            raise ContractViolationError("split sizes must be positive")


@dataclass
class Table:
    columns: list
    values: np.ndarray  # (n, len(columns))

    @property
    def n(self):
        return self.values.shape[0]


def load_csv(path) -> Table:
    """Read a numeric CSV with a header row.  Non-numeric cells and ragged
    rows are rejected with 1-based row/column diagnostics."""
    if not os.path.exists(path):
        raise MissingFileError(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(1, 1, "empty file") from None
        header = [c.strip() for c in header]
        width = len(header)
        rows = []
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ColumnCountMismatchError(i, width, len(row))
            vals = np.empty(width)
            for j, cell in enumerate(row):
                try:
                    vals[j] = float(cell)
                except ValueError:
                    raise ParseError(i, j + 1, f"non-numeric cell {cell!r}") from None
            rows.append(vals)
    if not rows:
        raise ParseError(2, 1, "no data rows")
    return Table(columns=header, values=np.asarray(rows))


@dataclass
class ScalerRecord:
    mean: np.ndarray
    scale: np.ndarray
    zero_variance: list  # flagged column names scaled by 1


@dataclass
class PreparedData:
    train: Dataset
    validation: Dataset
    test: Dataset
    scaler: ScalerRecord
    feature_names: list
    response_name: str
    test_raw: np.ndarray  # unscaled predictor rows of the test split
    indices: dict  # split name -> original row indices


def preprocess(table: Table, split: SplitSpec) -> PreparedData:
    """log1p the response (last column), standardize predictors with training
    moments, prepend an intercept column, and split by a seeded permutation."""
    n = table.n
    if split.n_train + split.n_validation >= n:
        raise ContractViolationError(
            f"n_train + n_validation = {split.n_train + split.n_validation} "
            f"must be < {n}"
        )
    raw_F = table.values[:, :-1]
    y = np.log1p(table.values[:, -1])

    perm = np.random.default_rng(split.rng_seed).permutation(n)
    idx_train = perm[: split.n_train]
    idx_val = perm[split.n_train : split.n_train + split.n_validation]
    idx_test = perm[split.n_train + split.n_validation :]

    mu = raw_F[idx_train].mean(axis=0)
    sd = raw_F[idx_train].std(axis=0)
    zero_var = sd == 0.0
    sd_eff = np.where(zero_var, 1.0, sd)
    flagged = [table.columns[j] for j in np.flatnonzero(zero_var)]

    Fs = (raw_F - mu) / sd_eff

    def make(idx):
        return Dataset(
            X=np.column_stack([np.ones(idx.size), Fs[idx]]), y=y[idx]
        )

    return PreparedData(
        train=make(idx_train),
        validation=make(idx_val),
        test=make(idx_test),
        scaler=ScalerRecord(mean=mu, scale=sd_eff, zero_variance=flagged),
        feature_names=table.columns[:-1],
        response_name=table.columns[-1],
        test_raw=raw_F[idx_test],
        indices={"train": idx_train, "validation": idx_val, "test": idx_test},
    )


def default_lambda_grid(n_alpha=10, n_beta=10, lo=1e-3, hi=1.0):
    """Logarithmically spaced (lambda_alpha, lambda_beta) pairs."""
    las = np.geomspace(lo, hi, n_alpha)
    lbs = np.geomspace(lo, hi, n_beta)
    return [(float(a), float(b)) for a in las for b in lbs]


def point_predictions(fit: FitResult, X):
    """Hard-assignment predictions x'beta_{k(x)} with k(x) = argmax pi_k(x)."""
    P = mixture_weights(fit.params.alpha, X)
    khat = np.argmax(P, axis=1)
    return np.einsum("ij,ij->i", X, fit.params.beta[khat])


def select_k(
    train: Dataset,
    validation: Dataset,
    k_candidates,
    em_cfg: EMConfig,
    lambda_grid=None,
    folds=5,
):
    """Fit each candidate K (with cross-validated penalties) on the training
    split and score validation MSE of hard-assignment predictions.  Returns
    (best K, fits by K, table rows); ties break toward the smaller K."""
    ks = sorted(set(int(k) for k in k_candidates))
    if not ks:
        raise ContractViolationError("k_candidates must be nonempty")
    if lambda_grid is None:
        lambda_grid = default_lambda_grid()
    table = []
    fits = {}
    best = None
    for K in ks:
        try:
            if len(lambda_grid) > 1:
                cv = cross_validate(train, K, lambda_grid, folds, em_cfg)
                cfg_k = replace(
                    em_cfg, lambda_alpha=cv.lambda_alpha, lambda_beta=cv.lambda_beta
                )
            else:
                la, lb = lambda_grid[0]
                cfg_k = replace(em_cfg, lambda_alpha=la, lambda_beta=lb)
            fit = fit_em(train, K, cfg_k)
            pred = point_predictions(fit, validation.X)
            mse = float(np.mean((validation.y - pred) ** 2))
            fits[K] = fit
        except Exception as exc:  # a failed fit scores infinity
            mse = math.inf
            table.append(
                {"k": K, "mse": mse, "lambda_alpha": None, "lambda_beta": None,
                 "error": str(exc)}
            )
            continue
        table.append(
            {
                "k": K,
                "mse": mse,
                "lambda_alpha": cfg_k.lambda_alpha,
                "lambda_beta": cfg_k.lambda_beta,
            }
        )
        if best is None or mse < best[0]:
            best = (mse, K)
    if best is None:
        raise RuntimeError("every candidate K failed to fit")
    return best[1], fits, table


@dataclass
class RowResult:
    row: int
    contained: bool
    raw_length: float
    intervals: list
    n_intervals: int


@dataclass
class TestEvaluation:
    coverage: float
    mean_raw_length: float
    rows: list  # RowResult per scored test row
    n_failed: int


def evaluate_test(
    train: Dataset,
    fit: FitResult,
    test: Dataset,
    q,
    db_cfg: DebiasConfig,
    hdr_gamma=0.01,
) -> TestEvaluation:
    """Build a prediction set for every test row and score containment of the
    observed response plus the back-transformed (Kelvin) set length."""
    ctx = debias_context(train, fit, db_cfg)
    rows = []
    failed = 0
    for i in range(test.n):
        try:
            db = debias_at(ctx, test.X[i])
            delta = default_delta(db, q, hdr_gamma)
            ps = build_prediction_set(db, q, delta)
        except Exception:
            failed += 1
            if failed > max(1, 0.01 * test.n):
                raise
            continue
        rows.append(
            RowResult(
                row=i,
                contained=contains(ps, test.y[i]),
                raw_length=raw_scale_length(ps),
                intervals=[[float(a), float(b)] for a, b in ps.intervals],
                n_intervals=len(ps.intervals),
            )
        )
    if not rows:
        raise RuntimeError("no test rows were scored")
    cov = float(np.mean([r.contained for r in rows]))
    mlen = float(np.mean([r.raw_length for r in rows]))
    return TestEvaluation(coverage=cov, mean_raw_length=mlen, rows=rows, n_failed=failed)


@dataclass
class SubgroupReport:
    variable: str
    edges: np.ndarray
    counts: list
    coverage: list  # None for empty bins


def subgroup_coverage(
    evaluation: TestEvaluation, variable_values, variable_name, n_bins
) -> SubgroupReport:
    """Per-bin coverage over equal-width bins of a predictor's test range."""
    v = np.asarray(variable_values, dtype=float)
    scored = np.array([r.row for r in evaluation.rows])
    hit = np.array([r.contained for r in evaluation.rows], dtype=float)
    lo, hi = float(v.min()), float(v.max())
    edges = np.linspace(lo, hi, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, n_bins - 1)
    counts, coverage = [], []
    for b in range(n_bins):
        members = np.flatnonzero(idx == b)
        counts.append(int(members.size))
        in_bin = np.isin(scored, members)
        if not np.any(in_bin):
            coverage.append(None)
        else:
            coverage.append(float(hit[in_bin].mean()))
    return SubgroupReport(
        variable=variable_name, edges=edges, counts=counts, coverage=coverage
    )


def run_pipeline(
    table: Table,
    split: SplitSpec,
    q=0.05,
    k_candidates=(1, 2, 3, 4, 5),
    fixed_k=None,
    em_cfg: EMConfig | None = None,
    db_cfg: DebiasConfig | None = None,
    lambda_grid=None,
    folds=5,
    n_bins=5,
    subgroup_var=DEFAULT_SUBGROUP_VAR,
):
    """Full protocol: split, choose K (unless fixed), fit, score the test set,
    and bin coverage by the chosen predictor.  Returns a plain dict report."""
    em_cfg = em_cfg or EMConfig()
    db_cfg = db_cfg or DebiasConfig()
    prep = preprocess(table, split)

    if fixed_k is not None:
        best_k = int(fixed_k)
        grid = lambda_grid or default_lambda_grid()
        if len(grid) > 1:
            cv = cross_validate(prep.train, best_k, grid, folds, em_cfg)
            cfg_k = replace(
                em_cfg, lambda_alpha=cv.lambda_alpha, lambda_beta=cv.lambda_beta
            )
        else:
            cfg_k = replace(em_cfg, lambda_alpha=grid[0][0], lambda_beta=grid[0][1])
        fit = fit_em(prep.train, best_k, cfg_k)
        k_table = [{"k": best_k, "mse": None, "lambda_alpha": cfg_k.lambda_alpha,
                    "lambda_beta": cfg_k.lambda_beta}]
    else:
        best_k, fits, k_table = select_k(
            prep.train, prep.validation, k_candidates, em_cfg,
            lambda_grid=lambda_grid, folds=folds,
        )
        fit = fits[best_k]

    evaluation = evaluate_test(prep.train, fit, prep.test, q, db_cfg)

    if subgroup_var not in prep.feature_names:
        raise ContractViolationError(
            f"subgroup variable {subgroup_var!r} not in the data columns"
        )
    var_col = prep.feature_names.index(subgroup_var)
    subgroups = subgroup_coverage(
        evaluation, prep.test_raw[:, var_col], subgroup_var, n_bins
    )

    return {
        "best_k": best_k,
        "per_k_errors": k_table,
        "overall_coverage": evaluation.coverage,
        "mean_raw_length": evaluation.mean_raw_length,
        "n_test_scored": len(evaluation.rows),
        "n_test_failed": evaluation.n_failed,
        "subgroups": [
            {
                "bin": b + 1,
                "lo": float(subgroups.edges[b]),
                "hi": float(subgroups.edges[b + 1]),
                "count": subgroups.counts[b],
                "coverage": subgroups.coverage[b],
            }
            for b in range(len(subgroups.counts))
        ],
        "subgroup_variable": subgroup_var,
    }, evaluation, prep, fit
