"""Monte Carlo coverage harness for the synthetic scenarios.

Each scenario bundles a ground-truth parameter set, a covariate design, and
evaluation points.  run_coverage repeatedly samples a training set, fits the
model (or uses the truth directly in oracle mode), builds a prediction set at
every evaluation point, and scores containment of fresh responses drawn from
the truth.  Replications that fail (dead component, infeasible direction
program) are dropped and counted; the run aborts if more than 10% drop.
"""

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import permutations

import numpy as np

from .errors import (
    ContractViolationError,
    DegenerateComponentError,
    InfeasibleAfterFallbackError,
)
from .model import Dataset, MoEParams, mixture_weights, sample_dataset
from .em import EMConfig, fit_em
from .debias import DebiasConfig, debias_context, debias_at, plugin_result
from .predset import build_prediction_set, contains_many, default_delta

LOG9 = math.log(9.0)
LOG10 = math.log(10.0)
LOG4 = math.log(4.0)


@dataclass
class Scenario:
    name: str
    truth: MoEParams
    design: str  # "fixed" (training X = eval grid) or "gaussian_repeated"
    n: int
    replications: int
    n_ynew: int
    q: float
    eval_points: np.ndarray
    rng_seed: int = 0
    hdr_gamma: float = 0.01
    n_groups: int = 0  # gaussian_repeated: distinct covariate rows
    group_size: int = 0  # gaussian_repeated: replicates per row

    def __post_init__(self):
        if self.replications < 1 or self.n_ynew < 1:
            raise ContractViolationError("replications and n_ynew must be >= 1")
        if not 0.0 < self.q < 1.0:
            raise ContractViolationError("q must be in (0, 1)")
        self.eval_points = np.asarray(self.eval_points, dtype=float)


def _quadratic_grid(n):
    t = np.linspace(0.0, 1.0, n)
    return np.column_stack([np.ones(n), t, t * t])


def scenario_fig1(replications=100, n_ynew=200, rng_seed=0) -> Scenario:
    """Two groups on x = (1, t, t^2): a quadratic mean 10(t-0.5)^2 and a
    constant mean 1, equal noise 0.15, first-group weight falling 0.9 -> 0.1."""
    X = _quadratic_grid(100)
    truth = MoEParams(
        beta=np.array([[2.5, -10.0, 10.0], [1.0, 0.0, 0.0]]),
        alpha=np.array([[LOG9, -2.0 * LOG9, 0.0], [0.0, 0.0, 0.0]]),
        sigma=np.array([0.15, 0.15]),
    )
    return Scenario(
        name="fig1",
        truth=truth,
        design="fixed",
        n=100,
        replications=replications,
        n_ynew=n_ynew,
        q=0.05,
        eval_points=X,
        rng_seed=rng_seed,
    )


def scenario_fig2(replications=100, n_ynew=200, rng_seed=0) -> Scenario:
    """fig1 with unequal noise scales (0.1, 0.2)."""
    scn = scenario_fig1(replications, n_ynew, rng_seed)
    truth = MoEParams(
        beta=scn.truth.beta, alpha=scn.truth.alpha, sigma=np.array([0.1, 0.2])
    )
    return replace(scn, name="fig2", truth=truth)


def scenario_fig3(replications=100, n_ynew=200, rng_seed=0) -> Scenario:
    """fig1 with class imbalance: first-group weight from ~0.91 to ~0.29,
    about 60% of observations in the first group overall."""
    scn = scenario_fig1(replications, n_ynew, rng_seed)
    truth = MoEParams(
        beta=scn.truth.beta,
        alpha=np.array([[LOG10, -LOG10 * LOG4, 0.0], [0.0, 0.0, 0.0]]),
        sigma=np.array([0.15, 0.15]),
    )
    return replace(scn, name="fig3", truth=truth)


def _highdim_truth():
    p = 501
    beta1 = np.zeros(p)
    beta1[:6] = [-2.0, 4.0, -2.0, -4.0, 6.0, 2.0]
    beta2 = np.zeros(p)
    beta2[0] = 2.0
    beta2[6:11] = [4.0, -2.0, -4.0, 6.0, 2.0]
    alpha1 = np.zeros(p)
    alpha1[496:501] = 0.7
    alpha2 = np.zeros(p)
    alpha2[491:496] = -0.7
    return MoEParams(
        beta=np.stack([beta1, beta2]),
        alpha=np.stack([alpha1, alpha2]),
        sigma=np.array([1.0, 1.0]),
    )


def _gaussian_rows(m, p, rng):
    X = rng.standard_normal((m, p))
    X[:, 0] = 1.0
    return X


def scenario_highdim(
    replications=20, n_ynew=50, rng_seed=0, n_eval=100
) -> Scenario:
    """High-dimensional design: p=501 with intercept, 150 covariate rows with
    5 replicates each (n=750), sparse truth, unit noise; evaluation points are
    drawn once with a fixed stream and reused across replications."""
    truth = _highdim_truth()
    eval_rng = np.random.default_rng(np.random.SeedSequence([rng_seed, 0xE7A1]))
    eval_points = _gaussian_rows(n_eval, truth.p, eval_rng)
    return Scenario(
        name="highdim",
        truth=truth,
        design="gaussian_repeated",
        n=750,
        replications=replications,
        n_ynew=n_ynew,
        q=0.05,
        eval_points=eval_points,
        rng_seed=rng_seed,
        n_groups=150,
        group_size=5,
    )


SCENARIOS = {
    "fig1": scenario_fig1,
    "fig2": scenario_fig2,
    "fig3": scenario_fig3,
    "highdim": scenario_highdim,
}


@dataclass
class CoverageReport:
    scenario: str
    eval_points: np.ndarray
    coverage: np.ndarray
    mean_length: np.ndarray
    mean_n_intervals: np.ndarray
    pi1: np.ndarray  # truth gating weight of component 0 at each eval point
    mean_gap: np.ndarray  # |x'(beta_1 - beta_2)| (K=2 truths; else 0)
    n_effective: int  # replications that succeeded
    dropped: int
    metadata: dict = field(default_factory=dict)

    def rows(self):
        out = []
        for j in range(self.eval_points.shape[0]):
            out.append(
                {
                    "eval_id": j,
                    "coord": float(self.eval_points[j, 1])
                    if self.eval_points.shape[1] > 1
                    else 0.0,
                    "pi1": float(self.pi1[j]),
                    "gap": float(self.mean_gap[j]),
                    "coverage": float(self.coverage[j]),
                    "mean_length": float(self.mean_length[j]),
                    "mean_n_intervals": float(self.mean_n_intervals[j]),
                    "dropped": self.dropped,
                }
            )
        return out

    def write_csv(self, path):
        rows = self.rows()
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)

    def to_json_dict(self):
        return {
            "scenario": self.scenario,
            "n_effective": self.n_effective,
            "dropped": self.dropped,
            "rows": self.rows(),
            "metadata": self.metadata,
        }


def _training_X(scn: Scenario, rng):
    if scn.design == "fixed":
        return scn.eval_points if scn.eval_points.shape[0] == scn.n else _quadratic_grid(scn.n)
    if scn.design == "gaussian_repeated":
        base = _gaussian_rows(scn.n_groups, scn.truth.p, rng)
        return np.repeat(base, scn.group_size, axis=0)
    raise ContractViolationError(f"unknown design {scn.design!r}")


def _replication(scn: Scenario, em_cfg, db_cfg, oracle, seeds):
    """One replication: fit, build sets, score fresh draws.  Returns
    (contained counts, lengths, interval counts) per eval point."""
    train_seed, fit_seed, ynew_seed = seeds
    rng = np.random.default_rng(train_seed)
    X_train = _training_X(scn, rng)
    data = sample_dataset(scn.truth, X_train, rng)

    m = scn.eval_points.shape[0]
    contained = np.zeros(m)
    lengths = np.zeros(m)
    n_ivals = np.zeros(m)

    if oracle:
        ctx = None
    else:
        fit = fit_em(data, scn.truth.K, replace(em_cfg, rng_seed=fit_seed))
        ctx = debias_context(data, fit, db_cfg)

    fresh = sample_dataset(
        scn.truth,
        np.repeat(scn.eval_points, scn.n_ynew, axis=0),
        ynew_seed,
    )
    y_new = fresh.y.reshape(m, scn.n_ynew)

    for j in range(m):
        x = scn.eval_points[j]
        db = plugin_result(scn.truth, x) if oracle else debias_at(ctx, x)
        delta = default_delta(db, scn.q, scn.hdr_gamma)
        ps = build_prediction_set(db, scn.q, delta)
        contained[j] = float(contains_many(ps, y_new[j]).sum())
        lengths[j] = ps.total_length
        n_ivals[j] = len(ps.intervals)
    return contained, lengths, n_ivals


def _replication_star(args):
    return _replication(*args)


def run_coverage(
    scn: Scenario,
    em_cfg: EMConfig,
    db_cfg: DebiasConfig,
    oracle=False,
    n_jobs=1,
) -> CoverageReport:
    """Aggregate containment and set length over replications.

    Deterministic given the scenario seed: every replication draws its
    training set, fit initialization, and fresh responses from spawned
    substreams keyed by the replication index.
    """
    ss = np.random.SeedSequence(scn.rng_seed)
    rep_seeds = []
    for r, child in enumerate(ss.spawn(scn.replications)):
        sub = child.spawn(3)
        rep_seeds.append((sub[0], int(sub[1].generate_state(1)[0]), sub[2]))

    args = [(scn, em_cfg, db_cfg, oracle, s) for s in rep_seeds]
    results = []
    failures = []
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            for r, res in enumerate(_map_safe(pool, args)):
                if isinstance(res, Exception):
                    failures.append((r, res))
                else:
                    results.append(res)
    else:
        for r, a in enumerate(args):
            try:
                results.append(_replication_star(a))
            except (DegenerateComponentError, InfeasibleAfterFallbackError) as exc:
                failures.append((r, exc))

    dropped = len(failures)
    if dropped > 0.1 * scn.replications:
        raise RuntimeError(
            f"{dropped}/{scn.replications} replications failed; first: {failures[0][1]}"
        )

    m = scn.eval_points.shape[0]
    contained = np.zeros(m)
    lengths = np.zeros(m)
    n_ivals = np.zeros(m)
    for c, l, k in results:
        contained += c
        lengths += l
        n_ivals += k
    n_eff = len(results)
    denom = max(n_eff, 1)

    truth = scn.truth
    pi1 = np.array([mixture_weights(truth.alpha, x)[0] for x in scn.eval_points])
    if truth.K == 2:
        gap = np.abs(scn.eval_points @ (truth.beta[0] - truth.beta[1]))
    else:
        gap = np.zeros(m)

    return CoverageReport(
        scenario=scn.name,
        eval_points=scn.eval_points,
        coverage=contained / (denom * scn.n_ynew),
        mean_length=lengths / denom,
        mean_n_intervals=n_ivals / denom,
        pi1=pi1,
        mean_gap=gap,
        n_effective=n_eff,
        dropped=dropped,
        metadata={
            "replications": scn.replications,
            "n_ynew": scn.n_ynew,
            "q": scn.q,
            "oracle": bool(oracle),
            "rng_seed": scn.rng_seed,
        },
    )


def _map_safe(pool, args):
    futures = [pool.submit(_replication_star, a) for a in args]
    for f in futures:
        try:
            yield f.result()
        except (DegenerateComponentError, InfeasibleAfterFallbackError) as exc:
            yield exc


def label_match(fitted: MoEParams, truth: MoEParams):
    """Permutation of fitted components minimizing total beta distance to the
    truth, by exhaustive search (K <= 6)."""
    if fitted.K != truth.K or fitted.p != truth.p:
        raise ContractViolationError("label_match needs matching K and p")
    if fitted.K > 6:
        raise ContractViolationError("label_match supports K <= 6 only")
    best_perm, best_cost = None, np.inf
    for perm in permutations(range(fitted.K)):
        cost = sum(
            float(np.linalg.norm(fitted.beta[perm[k]] - truth.beta[k]))
            for k in range(fitted.K)
        )
        if cost < best_cost:
            best_perm, best_cost = perm, cost
    return best_perm
