"""Shared helpers: random instances and independent naive-arithmetic oracles.

The oracles deliberately avoid the library's vectorized/log-space code paths;
they loop in plain Python with math.* so they can catch broadcasting or
stabilization mistakes in the implementation.
"""

import math
import os

import numpy as np
import pytest

from moepred.model import Dataset, MoEParams

FIXTURE_CSV = os.path.join(os.path.dirname(__file__), "data", "superconduct_fixture.csv")

# path to the canonical ~21k-row superconductivity CSV; tests that need it
# skip when unset
CANONICAL_ENV = "SUPERCON_CSV"


def canonical_csv_path():
    return os.environ.get(CANONICAL_ENV, "")


def random_params(rng, K, p, spread=1.0, anchor=True):
    beta = rng.normal(scale=spread, size=(K, p))
    alpha = rng.normal(scale=0.5, size=(K, p))
    if anchor:
        alpha[K - 1] = 0.0
    sigma = rng.uniform(0.3, 1.5, size=K)
    return MoEParams(beta=beta, alpha=alpha, sigma=sigma)


def random_dataset(rng, params, n):
    X = rng.standard_normal((n, params.p))
    X[:, 0] = 1.0
    from moepred.model import sample_dataset

    return sample_dataset(params, X, rng)


# ---------------------------------------------------------------------------
# naive oracles (plain loops, no shared code with the package)
# ---------------------------------------------------------------------------


def naive_pi(alpha, x):
    K = len(alpha)
    exps = [math.exp(sum(float(a) * float(v) for a, v in zip(alpha[k], x))) for k in range(K)]
    tot = sum(exps)
    return [e / tot for e in exps]


def naive_phi(beta_k, sigma_k, x, y):
    mean = sum(float(b) * float(v) for b, v in zip(beta_k, x))
    s = float(sigma_k)
    return math.exp(-((y - mean) ** 2) / (2 * s * s)) / (math.sqrt(2 * math.pi) * s)


def naive_log_likelihood(params, data):
    total = 0.0
    for i in range(data.n):
        x, y = data.X[i], float(data.y[i])
        pis = naive_pi(params.alpha, x)
        mix = sum(
            pis[k] * naive_phi(params.beta[k], params.sigma[k], x, y)
            for k in range(params.K)
        )
        total += math.log(mix)
    return total / data.n


def naive_q_objective(params, G, data, lambda_alpha, lambda_beta, penalize_intercept):
    total = 0.0
    for i in range(data.n):
        x, y = data.X[i], float(data.y[i])
        pis = naive_pi(params.alpha, x)
        for k in range(params.K):
            phi = naive_phi(params.beta[k], params.sigma[k], x, y)
            total += float(G[i, k]) * (math.log(pis[k]) + math.log(phi))
    start = 0 if penalize_intercept else 1
    pen = lambda_alpha * sum(
        sum(abs(float(v)) for v in params.alpha[k][start:]) for k in range(params.K)
    ) + lambda_beta * sum(
        sum(abs(float(v)) for v in params.beta[k][start:]) for k in range(params.K)
    )
    return -total / data.n + pen


def naive_weighted_gram(data, gamma_k, sigma_k):
    n, p = data.X.shape
    out = np.zeros((p, p))
    for i in range(n):
        w = float(gamma_k[i]) / float(sigma_k) ** 2
        for a in range(p):
            for b in range(p):
                out[a, b] += w * data.X[i, a] * data.X[i, b]
    return out / n


def naive_fisher(data, params, G, k):
    n, p = data.X.shape
    out = np.zeros((p, p))
    for i in range(n):
        r = float(data.y[i]) - sum(
            float(b) * float(v) for b, v in zip(params.beta[k], data.X[i])
        )
        c = float(G[i, k]) * r / float(params.sigma[k]) ** 2
        for a in range(p):
            for b2 in range(p):
                out[a, b2] += c * c * data.X[i, a] * data.X[i, b2]
    return out / n


def naive_score(data, params, G, k):
    n, p = data.X.shape
    out = np.zeros(p)
    for i in range(n):
        r = float(data.y[i]) - sum(
            float(b) * float(v) for b, v in zip(params.beta[k], data.X[i])
        )
        w = float(G[i, k]) * r / float(params.sigma[k]) ** 2
        out += w * data.X[i]
    return out / n


def quad_mass(db, intervals):
    """Adaptive-quadrature mass of the mixture over a list of intervals."""
    from scipy.integrate import quad
    from moepred.predset import mixture_density

    return sum(
        quad(lambda y: float(mixture_density(db, y)), a, b, limit=200)[0]
        for a, b in intervals
    )


def grid_oracle_p2(F, S, x, lam, budget, stages=3, grid_n=241):
    """Staged dense grid search over the feasible region of the p=2 program.

    Starts from the bounding box of the l1-budget square intersected with the
    tube preimage, refines around the best feasible cell.  Independent of the
    interior-point implementation.
    """
    xn = float(np.linalg.norm(x))
    c = budget

    def feasible(pts):
        R = pts @ S.T - x
        ok = np.abs(R).max(axis=1) <= lam * xn + 1e-12
        ok &= np.abs(R @ x) <= lam * xn * xn + 1e-12
        ok &= np.abs(pts).sum(axis=1) <= c + 1e-12
        return ok

    lo = np.array([-c, -c])
    hi = np.array([c, c])
    best_val, best_pt = np.inf, None
    for _ in range(stages):
        g0 = np.linspace(lo[0], hi[0], grid_n)
        g1 = np.linspace(lo[1], hi[1], grid_n)
        U0, U1 = np.meshgrid(g0, g1, indexing="ij")
        pts = np.column_stack([U0.ravel(), U1.ravel()])
        ok = feasible(pts)
        if not ok.any():
            break
        obj = np.einsum("ij,jk,ik->i", pts[ok], F, pts[ok])
        j = int(np.argmin(obj))
        val = float(obj[j])
        pt = pts[ok][j]
        if val < best_val:
            best_val, best_pt = val, pt
        h = np.array([g0[1] - g0[0], g1[1] - g1[0]])
        lo = pt - 3 * h
        hi = pt + 3 * h
    return best_val, best_pt


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
