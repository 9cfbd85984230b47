"""Mixture-of-experts regression model: densities, responsibilities, sampling.

The model has K components.  Component k draws y ~ N(x'beta_k, sigma_k^2),
and the component label is multinomial with covariate-dependent weights
pi_k(x) = softmax_k(x'alpha_k).  By convention column 0 of a design matrix
is the intercept.  Component indices are 0-based throughout the package.

All density work is done in log space; probabilities are exponentiated only
at the boundary.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError, InternalInvariantError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class MoEParams:
    """Full parameter set: regression, gating and noise scales for K components.

    beta and alpha are (K, p) arrays; sigma is (K,) positive.  Fitted models
    anchor alpha[K-1] == 0 for gating identifiability (adding a common vector
    to every alpha_k leaves the weights unchanged); ground-truth parameter
    sets used for sampling are allowed to carry an unanchored gating.
    """

    beta: np.ndarray
    alpha: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        alpha = np.atleast_2d(np.asarray(self.alpha, dtype=float))
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "sigma", sigma)
        if beta.ndim != 2 or alpha.shape != beta.shape:
            raise ContractViolationError(
                f"beta {beta.shape} and alpha {alpha.shape} must both be (K, p)"
            )
        if sigma.shape != (beta.shape[0],):
            raise ContractViolationError(
                f"sigma has shape {sigma.shape}, expected ({beta.shape[0]},)"
            )
        if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(alpha))):
            raise ContractViolationError("beta/alpha must be finite")
        if not np.all(sigma > 0):
            raise ContractViolationError("all sigma[k] must be > 0")

    @property
    def K(self):
        return self.beta.shape[0]

    @property
    def p(self):
        return self.beta.shape[1]

    def to_dict(self):
        return {
            "k": self.K,
            "p": self.p,
            "beta": self.beta.tolist(),
            "alpha": self.alpha.tolist(),
            "sigma": self.sigma.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            beta=np.asarray(d["beta"], dtype=float),
            alpha=np.asarray(d["alpha"], dtype=float),
            sigma=np.asarray(d["sigma"], dtype=float),
        )


@dataclass
class Dataset:
    """n covariate rows plus responses; z holds sampled labels (diagnostics only)."""

    X: np.ndarray
    y: np.ndarray
    z: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.ndim != 2:
            raise ContractViolationError("X must be a 2-d matrix")
        if self.X.shape[0] != self.y.shape[0]:
            raise ContractViolationError(
                f"X has {self.X.shape[0]} rows but y has {self.y.shape[0]}"
            )
        if self.X.shape[0] < 1:
            raise ContractViolationError("dataset must have n >= 1 rows")
        if not np.all(np.isfinite(self.X)) or not np.all(np.isfinite(self.y)):
            raise ContractViolationError("X and y must be finite")
        if self.z is not None:
            self.z = np.asarray(self.z, dtype=int).ravel()
            if self.z.shape != self.y.shape:
                raise ContractViolationError("z must have one label per row")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def subset(self, idx):
        z = None if self.z is None else self.z[idx]
        return Dataset(self.X[idx], self.y[idx], z)


def check_dims(params: MoEParams, data: Dataset):
    if params.p != data.p:
        raise ContractViolationError(
            f"params have p={params.p} but data has p={data.p}"
        )


def check_responsibilities(G, K=None, tol=1e-12):
    """Validate a responsibility matrix: entries >= 0, rows sum to 1 within tol."""
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or (K is not None and G.shape[1] != K):
        raise ContractViolationError(f"responsibilities have shape {G.shape}")
    if np.any(G < 0):
        raise ContractViolationError("responsibilities must be nonnegative")
    if np.max(np.abs(G.sum(axis=1) - 1.0)) > tol:
        raise ContractViolationError("responsibility rows must sum to 1")
    return G


def log_mixture_weights(alpha, x):
    """Row-wise log softmax of the gating logits x' alpha_k.

    x may be a single p-vector or an (n, p) matrix; returns (K,) or (n, K).
    """
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != alpha.shape[1]:
        raise ContractViolationError(
            f"x has length {X.shape[1]} but alpha vectors have length {alpha.shape[1]}"
        )
    logits = X @ alpha.T  # (n, K)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logw = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return logw[0] if single else logw


def mixture_weights(alpha, x):
    """Gating probabilities pi_k(x) = exp(x'alpha_k) / sum_l exp(x'alpha_l)."""
    return np.exp(log_mixture_weights(alpha, x))


def log_component_densities(params: MoEParams, X, y):
    """(n, K) matrix of log phi_k(x_i, y_i) for the Gaussian components."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    resid = y[:, None] - X @ params.beta.T  # (n, K)
    z = resid / params.sigma[None, :]
    return -0.5 * z * z - np.log(params.sigma)[None, :] - 0.5 * LOG_2PI


def component_density(params: MoEParams, k, x, y):
    """Gaussian density of component k at a single point (x, y)."""
    if not 0 <= k < params.K:
        raise ContractViolationError(f"component index {k} out of range [0, {params.K})")
    x = np.asarray(x, dtype=float)
    r = float(y) - float(x @ params.beta[k])
    s = params.sigma[k]
    return float(np.exp(-0.5 * (r / s) ** 2 - np.log(s) - 0.5 * LOG_2PI))


def _log_joint(params: MoEParams, data: Dataset):
    """(n, K) matrix of log[pi_k(x_i) phi_k(x_i, y_i)]."""
    return log_mixture_weights(params.alpha, data.X) + log_component_densities(
        params, data.X, data.y
    )


def responsibilities(params: MoEParams, data: Dataset):
    """Posterior membership probabilities gamma_{i,k}, computed in log space."""
    check_dims(params, data)
    lj = _log_joint(params, data)
    m = lj.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise InternalInvariantError("all component log-densities are -inf for a row")
    G = np.exp(lj - m)
    G /= G.sum(axis=1, keepdims=True)
    return G


def log_likelihood(params: MoEParams, data: Dataset):
    """Average log mixture density (1/n) sum_i log sum_k pi_k phi_k."""
    check_dims(params, data)
    lj = _log_joint(params, data)
    m = lj.max(axis=1)
    return float(np.mean(m + np.log(np.exp(lj - m[:, None]).sum(axis=1))))


def sample_dataset(params: MoEParams, X, rng_seed) -> Dataset:
    """Draw labels from the gating weights and responses from the chosen experts.

    Deterministic given rng_seed (any numpy seed-like value is accepted).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.p:
        raise ContractViolationError(f"X must be (n, {params.p})")
    rng = np.random.default_rng(rng_seed)
    P = mixture_weights(params.alpha, X)
    cum = np.cumsum(P, axis=1)
    u = rng.random(X.shape[0])
    z = np.minimum((u[:, None] > cum).sum(axis=1), params.K - 1)
    mean = np.einsum("ij,ij->i", X, params.beta[z])
    y = mean + params.sigma[z] * rng.standard_normal(X.shape[0])
    return Dataset(X=X, y=y, z=z)
