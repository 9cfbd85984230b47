"""Debiased per-component predictions with variance estimates.

The plug-in prediction x_new'beta_hat_k inherits shrinkage bias from the
penalized fit.  For each component we solve a constrained quadratic program
for a projection direction u_k that trades the variance quadratic form
(score outer-product matrix) against the bias slack on the weighted Gram
constraint, then add the score correction along u_k.  The prediction scale
is b_k = sqrt(V_k + sigma_k^2).
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractViolationError, InfeasibleAfterFallbackError
from .model import Dataset, MoEParams, check_dims, mixture_weights
from .em import FitResult
from .qp import solve_projection_qp

MAX_LAMBDA_RETRIES = 20


@dataclass(frozen=True)
class DebiasConfig:
    # None: use sqrt(log(p)/n) resolved against the data at solve time
    lambda_k: float | None = None
    L: float = 100.0
    use_sample_splitting: bool = False
    solver_tol: float = 1e-6
    solver_max_iter: int = 50000
    lambda_growth: float = 1.3
    rng_seed: int = 0

    def __post_init__(self):
        if self.solver_tol <= 0:
            raise ContractViolationError("solver_tol must be > 0")
        if self.lambda_growth <= 1:
            raise ContractViolationError("lambda_growth must be > 1")
        if self.L <= 0:
            raise ContractViolationError("L must be > 0")
        if self.lambda_k is not None and self.lambda_k < 0:
            raise ContractViolationError("lambda_k must be nonnegative")


@dataclass
class DebiasResult:
    u: np.ndarray  # (K, p) projection directions
    gamma_d: np.ndarray  # (K,) debiased predictions
    V: np.ndarray  # (K,) variance estimates
    b: np.ndarray  # (K,) prediction standard deviations
    lambda_used: np.ndarray  # (K,) post-fallback tube widths
    pi_new: np.ndarray  # (K,) gating weights at x_new

    @property
    def K(self):
        return self.gamma_d.shape[0]


def weighted_gram(data: Dataset, gamma_k, sigma_k):
    """(1/n) sum_i (gamma_{i,k} / sigma_k^2) x_i x_i'."""
    w = np.asarray(gamma_k, dtype=float) / float(sigma_k) ** 2
    Xw = data.X * np.sqrt(w)[:, None]
    return (Xw.T @ Xw) / data.n


def fisher_beta(data: Dataset, params: MoEParams, resp, k):
    """Score outer-product matrix for the beta_k block.

    (1/n) sum_i c_i^2 x_i x_i' with c_i = gamma_{i,k} (y_i - x_i'beta_k) / sigma_k^2.
    """
    check_dims(params, data)
    G = np.asarray(resp, dtype=float)
    r = data.y - data.X @ params.beta[k]
    c = G[:, k] * r / params.sigma[k] ** 2
    Z = data.X * c[:, None]
    return (Z.T @ Z) / data.n


def score_vector(data: Dataset, params: MoEParams, resp, k):
    """(1/n) sum_i (gamma_{i,k}/sigma_k^2) (y_i - x_i'beta_k) x_i."""
    G = np.asarray(resp, dtype=float)
    r = data.y - data.X @ params.beta[k]
    w = G[:, k] * r / params.sigma[k] ** 2
    return (data.X.T @ w) / data.n


def solve_projection_direction(gram, fisher, x_new, cfg: DebiasConfig):
    """Minimize u' fisher u over the tube-and-budget constraint set.

    Constraints: ||gram u - x||_inf <= lam ||x||_2, |<x, gram u - x>| <=
    lam ||x||_2^2, and ||u||_1 <= L ||x||_2.  If the solver cannot certify
    the program at lam, lam is grown geometrically (at most
    MAX_LAMBDA_RETRIES times).  Returns (u, lambda_used).
    """
    x_new = np.asarray(x_new, dtype=float).ravel()
    xn = float(np.linalg.norm(x_new))
    if xn <= 0:
        raise ContractViolationError("x_new must have positive norm")
    if cfg.lambda_k is None:
        raise ContractViolationError("lambda_k must be resolved before solving")
    lam = float(cfg.lambda_k)
    budget = cfg.L * xn
    for attempt in range(MAX_LAMBDA_RETRIES + 1):
        res = solve_projection_qp(
            fisher, gram, x_new, lam, budget,
            tol=cfg.solver_tol, max_iter=cfg.solver_max_iter,
        )
        if res.converged:
            return res.u, lam
        lam *= cfg.lambda_growth
    raise InfeasibleAfterFallbackError(lam, MAX_LAMBDA_RETRIES)


def debiased_estimate(data: Dataset, params: MoEParams, resp, k, u, x_new):
    """Plug-in prediction plus the score correction along u."""
    x_new = np.asarray(x_new, dtype=float).ravel()
    return float(x_new @ params.beta[k]) + float(
        np.asarray(u, dtype=float) @ score_vector(data, params, resp, k)
    )


def prediction_moments(fisher, u, sigma_k, n):
    """Variance estimate V = (1/n) u' fisher u and scale b = sqrt(V + sigma^2)."""
    u = np.asarray(u, dtype=float)
    V = float(u @ np.asarray(fisher, dtype=float) @ u) / n
    V = max(V, 0.0)
    return V, math.sqrt(V + float(sigma_k) ** 2)


def resolve_lambda(cfg: DebiasConfig, n, p):
    if cfg.lambda_k is not None:
        return cfg
    return replace(cfg, lambda_k=math.sqrt(math.log(p) / n))


def half_split(n, seed):
    """Deterministic 50/50 index split used when sample splitting is on."""
    perm = np.random.default_rng(seed).permutation(n)
    half = n // 2
    return np.sort(perm[:half]), np.sort(perm[half:])


@dataclass
class DebiasContext:
    """Per-component matrices that do not depend on x_new, precomputed so a
    fitted model can be debiased at many query points cheaply."""

    params: MoEParams
    grams: list
    fishers: list  # objective matrices for the direction program
    fishers_var: list  # matrices used for the variance estimate
    scores: list
    n_var: int
    cfg: DebiasConfig


def debias_context(data: Dataset, fit: FitResult, cfg: DebiasConfig) -> DebiasContext:
    params = fit.params
    check_dims(params, data)
    G = np.asarray(fit.responsibilities, dtype=float)
    cfg = resolve_lambda(cfg, data.n, data.p)

    if cfg.use_sample_splitting:
        i1, i2 = half_split(data.n, cfg.rng_seed)
        d1, g1 = data.subset(i1), G[i1]
        d2, g2 = data.subset(i2), G[i2]
    else:
        d1 = d2 = data
        g1 = g2 = G

    grams, fishers, fishers_var, scores = [], [], [], []
    for k in range(params.K):
        grams.append(weighted_gram(d1, g1[:, k], params.sigma[k]))
        fishers.append(fisher_beta(d1, params, g1, k))
        fishers_var.append(fisher_beta(d2, params, g2, k))
        scores.append(score_vector(d2, params, g2, k))
    return DebiasContext(
        params=params,
        grams=grams,
        fishers=fishers,
        fishers_var=fishers_var,
        scores=scores,
        n_var=d2.n,
        cfg=cfg,
    )


def debias_at(ctx: DebiasContext, x_new) -> DebiasResult:
    """Debias every component at a single query point."""
    x_new = np.asarray(x_new, dtype=float).ravel()
    params = ctx.params
    K, p = params.K, params.p
    if x_new.size != p:
        raise ContractViolationError(f"x_new has length {x_new.size}, expected {p}")
    U = np.zeros((K, p))
    gamma_d = np.zeros(K)
    V = np.zeros(K)
    b = np.zeros(K)
    lam_used = np.zeros(K)
    for k in range(K):
        try:
            u, lam = solve_projection_direction(
                ctx.grams[k], ctx.fishers[k], x_new, ctx.cfg
            )
        except InfeasibleAfterFallbackError as exc:
            raise InfeasibleAfterFallbackError(exc.lam_final, exc.retries) from exc
        U[k] = u
        lam_used[k] = lam
        gamma_d[k] = float(x_new @ params.beta[k]) + float(u @ ctx.scores[k])
        V[k], b[k] = prediction_moments(
            ctx.fishers_var[k], u, params.sigma[k], ctx.n_var
        )
    pi_new = mixture_weights(params.alpha, x_new)
    return DebiasResult(
        u=U, gamma_d=gamma_d, V=V, b=b, lambda_used=lam_used, pi_new=pi_new
    )


def debias_all(data: Dataset, fit: FitResult, x_new, cfg: DebiasConfig) -> DebiasResult:
    """Convenience wrapper: build the context and debias at one point."""
    return debias_at(debias_context(data, fit, cfg), x_new)


def plugin_result(params: MoEParams, x_new) -> DebiasResult:
    """Zero-direction result: plug-in centers, V = 0, b = sigma.  Used by the
    oracle mode of the simulation harness."""
    x_new = np.asarray(x_new, dtype=float).ravel()
    K, p = params.K, params.p
    gamma_d = params.beta @ x_new
    return DebiasResult(
        u=np.zeros((K, p)),
        gamma_d=np.asarray(gamma_d, dtype=float),
        V=np.zeros(K),
        b=params.sigma.astype(float).copy(),
        lambda_used=np.zeros(K),
        pi_new=mixture_weights(params.alpha, x_new),
    )
