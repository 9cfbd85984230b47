"""Penalized EM estimator for the mixture-of-experts model.

Each iteration alternates the E-step (posterior responsibilities) with three
M-step sub-updates in order: per-component l1-penalized weighted least squares
for beta (cyclic coordinate descent with soft-thresholding), a jointly convex
l1-penalized multinomial-logistic update for the gating vectors (proximal
gradient with backtracking, last component anchored at zero), and a
closed-form weighted-RMS update for sigma with a floor.

The sub-updates each lower the penalized surrogate objective at fixed
responsibilities; the full iteration lowers the penalized negative
log-likelihood (standard minorize-maximize argument).
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractViolationError, DegenerateComponentError
from .model import (
    Dataset,
    MoEParams,
    check_dims,
    log_likelihood,
    log_mixture_weights,
    log_component_densities,
    responsibilities,
)

RESP_FLOOR = 1e-8  # total responsibility below this marks a dead component


@dataclass(frozen=True)
class EMConfig:
    lambda_beta: float = 0.0
    lambda_alpha: float = 0.0
    max_iter: int = 1000
    tol: float = 1e-6
    n_restarts: int = 5
    sigma_floor: float = 1e-3
    rng_seed: int = 0
    # Column 0 of X is the intercept; by default it is left unpenalized
    # (both in the subproblems and in the reported objective).
    penalize_intercept: bool = False

    def __post_init__(self):
        if self.lambda_beta < 0 or self.lambda_alpha < 0:
            raise ContractViolationError("penalties must be nonnegative")
        if self.max_iter < 1:
            raise ContractViolationError("max_iter must be >= 1")
        if self.tol <= 0:
            raise ContractViolationError("tol must be > 0")
        if self.n_restarts < 1:
            raise ContractViolationError("n_restarts must be >= 1")
        if self.sigma_floor <= 0:
            raise ContractViolationError("sigma_floor must be > 0")


@dataclass
class FitResult:
    params: MoEParams
    responsibilities: np.ndarray
    objective_trace: np.ndarray
    converged: bool
    restart_index: int
    n_iter: int = 0
    lambda_beta: float = 0.0
    lambda_alpha: float = 0.0


def _l1(v, penalize_intercept):
    v = np.asarray(v, dtype=float)
    return float(np.abs(v).sum() if penalize_intercept else np.abs(v[..., 1:]).sum())


def q_objective(params: MoEParams, resp, data: Dataset, cfg: EMConfig):
    """Penalized EM surrogate: weighted complete-data NLL plus l1 penalties."""
    check_dims(params, data)
    G = np.asarray(resp, dtype=float)
    logw = log_mixture_weights(params.alpha, data.X)
    logphi = log_component_densities(params, data.X, data.y)
    fit_term = -float(np.sum(G * (logw + logphi))) / data.n
    pen = cfg.lambda_alpha * _l1(params.alpha, cfg.penalize_intercept) + (
        cfg.lambda_beta * _l1(params.beta, cfg.penalize_intercept)
    )
    return fit_term + pen


def _soft(z, t):
    return np.sign(z) * max(abs(z) - t, 0.0)


def m_step_beta(
    data: Dataset,
    gamma_k,
    sigma_k,
    lambda_beta,
    penalize_intercept=True,
    beta0=None,
    kkt_tol=1e-7,
    max_sweeps=20000,
):
    """Weighted lasso argmin_beta sum_i w_i (y_i - x_i'beta)^2 / (2n) + lam ||beta||_1.

    Weights are w_i = gamma_{i,k} / sigma_k^2.  Solved by cyclic coordinate
    descent on the precomputed weighted Gram system; stops once the
    subgradient (KKT) violation is below kkt_tol.
    """
    gamma_k = np.asarray(gamma_k, dtype=float)
    total = float(gamma_k.sum())
    if total <= 0:
        raise DegenerateComponentError(-1, total)
    X, y, n = data.X, data.y, data.n
    p = X.shape[1]
    w = gamma_k / float(sigma_k) ** 2
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    G = (Xw.T @ Xw) / n  # (1/n) X' W X
    b = (X.T @ (w * y)) / n
    a = np.diag(G).copy()

    lam = np.full(p, float(lambda_beta))
    if not penalize_intercept:
        lam[0] = 0.0

    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    Gb = G @ beta

    for _ in range(max_sweeps):
        max_delta = 0.0
        for j in range(p):
            old = beta[j]
            if a[j] <= 0.0:
                new = 0.0
            else:
                rho = b[j] - Gb[j] + a[j] * old
                new = _soft(rho, lam[j]) / a[j]
            if new != old:
                beta[j] = new
                Gb += G[:, j] * (new - old)
                max_delta = max(max_delta, abs(new - old))
        grad = Gb - b
        viol = np.where(
            beta != 0.0, np.abs(grad + lam * np.sign(beta)), np.maximum(np.abs(grad) - lam, 0.0)
        )
        viol[a <= 0.0] = 0.0
        if float(viol.max()) <= kkt_tol or max_delta < 1e-9:
            break
    return beta


def _alpha_objective_parts(A, X, G, lam, pen_mask):
    """Smooth multinomial-logistic term and l1 penalty.  A is (K-1, p); the
    anchored last component contributes a constant-zero logit."""
    n = X.shape[0]
    logits = X @ A.T  # (n, K-1)
    full = np.concatenate([logits, np.zeros((n, 1))], axis=1)
    m = np.maximum(full.max(axis=1), 0.0)
    lse = m + np.log(np.exp(full - m[:, None]).sum(axis=1))
    smooth = -float(np.sum(G[:, :-1] * logits) - lse.sum()) / n
    pen = lam * float(np.abs(A[:, pen_mask]).sum())
    return smooth, pen


def _alpha_gradient(A, X, G):
    n = X.shape[0]
    logits = X @ A.T
    full = np.concatenate([logits, np.zeros((n, 1))], axis=1)
    shifted = full - full.max(axis=1, keepdims=True)
    P = np.exp(shifted)
    P /= P.sum(axis=1, keepdims=True)
    return (X.T @ (P[:, :-1] - G[:, :-1])).T / n  # (K-1, p)


def m_step_alpha(
    data: Dataset,
    resp,
    lambda_alpha,
    penalize_intercept=True,
    alpha0=None,
    tol=1e-8,
    max_iter=5000,
):
    """Gating update: l1-penalized multinomial logistic fit to the responsibilities.

    Minimizes -(1/n) sum_i (sum_k gamma_{i,k} x_i'alpha_k - logsumexp_l x_i'alpha_l)
    + lam sum_k ||alpha_k||_1 subject to alpha_{K-1} = 0, by monotone proximal
    gradient (ISTA) with backtracking line search.  Returns a (K, p) array with
    the last row zero.
    """
    G = np.asarray(resp, dtype=float)
    n, K = G.shape
    X = data.X
    p = X.shape[1]
    if K == 1:
        return np.zeros((1, p))

    pen_mask = np.ones(p, dtype=bool)
    if not penalize_intercept:
        pen_mask[0] = False
    lam = float(lambda_alpha)

    if alpha0 is None:
        A = np.zeros((K - 1, p))
    else:
        A = np.asarray(alpha0, dtype=float)[: K - 1].copy()

    smooth, pen = _alpha_objective_parts(A, X, G, lam, pen_mask)
    obj = smooth + pen
    step = 1.0
    for _ in range(max_iter):
        grad = _alpha_gradient(A, X, G)
        while True:
            cand = A - step * grad
            shrunk = cand.copy()
            shrunk[:, pen_mask] = np.sign(cand[:, pen_mask]) * np.maximum(
                np.abs(cand[:, pen_mask]) - step * lam, 0.0
            )
            diff = shrunk - A
            s_new, p_new = _alpha_objective_parts(shrunk, X, G, lam, pen_mask)
            quad = smooth + float(np.sum(grad * diff)) + float(np.sum(diff * diff)) / (
                2.0 * step
            )
            if s_new <= quad + 1e-15:
                break
            step *= 0.5
            if step < 1e-18:
                break
        new_obj = s_new + p_new
        if new_obj > obj:  # fully stalled; keep the current iterate
            break
        rel = (obj - new_obj) / max(abs(obj), 1.0)
        A, smooth, obj = shrunk, s_new, new_obj
        step *= 1.5
        if rel < tol:
            break
    return np.concatenate([A, np.zeros((1, p))], axis=0)


def m_step_sigma(data: Dataset, gamma_k, beta_k, sigma_floor):
    """Weighted RMS residual for component k, clamped below at sigma_floor."""
    gamma_k = np.asarray(gamma_k, dtype=float)
    total = float(gamma_k.sum())
    if total <= 0:
        raise DegenerateComponentError(-1, total)
    r = data.y - data.X @ np.asarray(beta_k, dtype=float)
    return max(float(sigma_floor), float(np.sqrt(np.dot(gamma_k, r * r) / total)))


def _m_step_cycle(data: Dataset, G, sigma, cfg: EMConfig, beta0=None, alpha0=None):
    """One beta -> alpha -> sigma cycle at fixed responsibilities."""
    n, K = G.shape
    totals = G.sum(axis=0)
    for k in range(K):
        if totals[k] < RESP_FLOOR * n:
            raise DegenerateComponentError(k, totals[k])
    p = data.X.shape[1]
    beta = np.zeros((K, p))
    for k in range(K):
        beta[k] = m_step_beta(
            data,
            G[:, k],
            sigma[k],
            cfg.lambda_beta,
            penalize_intercept=cfg.penalize_intercept,
            beta0=None if beta0 is None else beta0[k],
        )
    alpha = m_step_alpha(
        data,
        G,
        cfg.lambda_alpha,
        penalize_intercept=cfg.penalize_intercept,
        alpha0=alpha0,
    )
    new_sigma = np.array(
        [m_step_sigma(data, G[:, k], beta[k], cfg.sigma_floor) for k in range(K)]
    )
    return MoEParams(beta=beta, alpha=alpha, sigma=new_sigma)


def _run_single(data: Dataset, K, cfg: EMConfig, seed):
    rng = np.random.default_rng(seed)
    G0 = rng.dirichlet(np.ones(K), size=data.n)
    sigma0 = np.full(K, max(float(np.std(data.y)), cfg.sigma_floor))
    params = _m_step_cycle(data, G0, sigma0, cfg)

    # Trace records the surrogate right after each M-step cycle, evaluated at
    # the responsibilities that built that cycle.  The initialization cycle
    # (driven by the artificial Dirichlet draw) is not an EM iterate and is
    # excluded.
    trace = []
    prev = None
    converged = False
    n_iter = 0
    for _ in range(cfg.max_iter):
        n_iter += 1
        G = responsibilities(params, data)
        params = _m_step_cycle(
            data, G, params.sigma, cfg, beta0=params.beta, alpha0=params.alpha
        )
        q = q_objective(params, G, data, cfg)
        trace.append(q)
        if prev is not None and prev - q < cfg.tol * max(abs(q), 1e-12):
            converged = True
            break
        prev = q
    return params, np.asarray(trace), converged, n_iter


def fit_em(data: Dataset, K, cfg: EMConfig) -> FitResult:
    """Fit by penalized EM over n_restarts seeded initializations.

    Each restart draws initial responsibilities row-wise from a symmetric
    Dirichlet(1) (seed = cfg.rng_seed + restart index) and runs one M-step
    cycle to obtain the starting parameters.  The restart with the smallest
    final surrogate objective wins; ties break toward the lower index.
    """
    if K < 1:
        raise ContractViolationError("K must be >= 1")
    if data.n < K:
        raise ContractViolationError(f"need n >= K, got n={data.n}, K={K}")
    best = None
    for r in range(cfg.n_restarts):
        params, trace, converged, n_iter = _run_single(
            data, K, cfg, cfg.rng_seed + r
        )
        if best is None or trace[-1] < best[1][-1]:
            best = (params, trace, converged, n_iter, r)
    params, trace, converged, n_iter, r = best
    return FitResult(
        params=params,
        responsibilities=responsibilities(params, data),
        objective_trace=trace,
        converged=converged,
        restart_index=r,
        n_iter=n_iter,
        lambda_beta=cfg.lambda_beta,
        lambda_alpha=cfg.lambda_alpha,
    )


@dataclass
class CVResult:
    lambda_alpha: float
    lambda_beta: float
    table: list  # rows: {"lambda_alpha", "lambda_beta", "mean_score", "fold_scores"}


def cross_validate(data: Dataset, K, grid, folds, cfg: EMConfig) -> CVResult:
    """Pick (lambda_alpha, lambda_beta) by K-fold held-out negative log-likelihood.

    grid is a sequence of (lambda_alpha, lambda_beta) pairs; fold assignment
    is a seeded permutation split into contiguous chunks.  The grid point with
    the smallest mean held-out score wins; on exact ties the first occurrence
    in grid order is kept.
    """
    grid = list(grid)
    if not grid:
        raise ContractViolationError("grid must be nonempty")
    if folds < 2:
        raise ContractViolationError("folds must be >= 2")
    perm = np.random.default_rng(cfg.rng_seed).permutation(data.n)
    chunks = np.array_split(perm, folds)

    table = []
    best = None
    for la, lb in grid:
        point_cfg = replace(cfg, lambda_alpha=float(la), lambda_beta=float(lb))
        scores = []
        for f in range(folds):
            hold = chunks[f]
            train = np.concatenate([chunks[g] for g in range(folds) if g != f])
            fit = fit_em(data.subset(train), K, point_cfg)
            scores.append(-log_likelihood(fit.params, data.subset(hold)))
        mean_score = float(np.mean(scores))
        table.append(
            {
                "lambda_alpha": float(la),
                "lambda_beta": float(lb),
                "mean_score": mean_score,
                "fold_scores": [float(s) for s in scores],
            }
        )
        if best is None or mean_score < best[0]:
            best = (mean_score, float(la), float(lb))
    return CVResult(lambda_alpha=best[1], lambda_beta=best[2], table=table)
