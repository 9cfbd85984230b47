"""Interior-point kernel for the projection-direction program.

Solves
    min_u  u' F u
    s.t.   ||S u - x||_inf <= lam * ||x||_2          (per-coordinate tube)
           |<x, S u - x>|  <= lam * ||x||_2^2        (inner-product tube)
           ||u||_1         <= budget
with F, S symmetric PSD.  The l1 ball is handled with the usual (u, t)
split (|u_j| <= t_j, sum t <= budget), giving a convex QP with 4p+3 linear
inequalities.  A Mehrotra predictor-corrector primal-dual iteration runs on
the reduced normal equations; the t-block is eliminated analytically
(diagonal plus rank-one), so each Newton step costs one p x p factorization.
Convergence is declared on the KKT residuals; an active-set polish pass then
tightens the returned point toward complementarity.

The problem is positively homogeneous in x, so it is solved at x/||x||_2 and
rescaled, which keeps the stopping tests well conditioned.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError


@dataclass
class QPResult:
    u: np.ndarray
    converged: bool
    n_iter: int
    kkt_residual: float
    max_violation: float
    objective: float


def constraint_violation(F, S, x, lam, budget, u):
    """Largest violation of the three constraint groups at u (0 if feasible)."""
    xn = float(np.linalg.norm(x))
    r = S @ u - x
    v1 = float(np.max(np.abs(r))) - lam * xn
    v2 = abs(float(x @ r)) - lam * xn * xn
    v3 = float(np.abs(u).sum()) - budget
    return max(v1, v2, v3, 0.0)


def solve_projection_qp(F, S, x, lam, budget, tol=1e-6, max_iter=50000):
    """Run the interior-point iteration.  Returns a QPResult; .converged is
    False when the target KKT residual was not reached (the caller treats
    that as infeasible-at-this-lambda and grows lam)."""
    F = np.asarray(F, dtype=float)
    S = np.asarray(S, dtype=float)
    x = np.asarray(x, dtype=float).ravel()
    p = x.size
    xn = float(np.linalg.norm(x))
    if xn <= 0:
        raise ValueError("x_new must be nonzero")

    # normalize: solve at unit x, rescale u afterwards (positive homogeneity)
    xh = x / xn
    bud = budget / xn

    res = _mehrotra(F, S, xh, float(lam), float(bud), tol, min(int(max_iter), 500))
    u = res.u * xn
    viol = constraint_violation(F, S, x, lam, budget, u)
    return QPResult(
        u=u,
        converged=res.converged and viol <= tol * max(1.0, xn),
        n_iter=res.n_iter,
        kkt_residual=res.kkt_residual,
        max_violation=viol,
        objective=float(u @ F @ u),
    )


def _mehrotra(F, S, x, lam, budget, tol, max_iter):
    p = x.size
    q = S @ x
    xsq = float(x @ x)  # == 1 after normalization

    # b for row groups: [S u <= lam + x | -S u <= lam - x | q'u <= (lam+1)
    #                    | -q'u <= lam - 1 | sum t <= budget | u - t <= 0 | -u - t <= 0]
    b = np.concatenate(
        [
            lam + x,
            lam - x,
            [(lam + 1.0) * xsq, (lam - 1.0) * xsq, budget],
            np.zeros(2 * p),
        ]
    )
    m = 4 * p + 3

    def apply_A(u, t):
        Su = S @ u
        qu = float(q @ u)
        return np.concatenate(
            [Su, -Su, [qu, -qu, t.sum()], u - t, -u - t]
        )

    def apply_AT(v):
        v1 = v[:p]
        v2 = v[p : 2 * p]
        v3, v4, v5 = v[2 * p], v[2 * p + 1], v[2 * p + 2]
        v6 = v[2 * p + 3 : 3 * p + 3]
        v7 = v[3 * p + 3 :]
        ru = S @ (v1 - v2) + q * (v3 - v4) + v6 - v7
        rt = v5 - v6 - v7
        return ru, rt

    u = np.zeros(p)
    t = np.full(p, max(budget / (2.0 * p), 1e-3))
    s = np.maximum(b - apply_A(u, t), 1.0)
    z = np.ones(m)

    F2 = 2.0 * F
    best = None
    stall = 0
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        Au = apply_A(u, t)
        rp = Au + s - b
        ATz_u, ATz_t = apply_AT(z)
        rd_u = F2 @ u + ATz_u
        rd_t = ATz_t
        mu = float(s @ z) / m

        kkt = max(
            float(np.max(np.abs(rd_u))),
            float(np.max(np.abs(rd_t))),
            float(np.max(np.abs(rp))),
            float(np.max(s * z)),
        )
        if best is None or kkt < best[0]:
            meaningful = best is None or kkt < 0.99 * best[0]
            best = (kkt, u.copy(), z.copy(), s.copy(), t.copy())
            stall = 0 if meaningful else stall + 1
        else:
            stall += 1
        if stall >= 20:  # infeasible or numerically stuck
            break
        if kkt <= 0.25 * tol:
            break

        s_safe = np.maximum(s, 1e-14)
        d = np.clip(z / s_safe, 1e-16, 1e16)
        d1, d2 = d[:p], d[p : 2 * p]
        d3, d4, d5 = d[2 * p], d[2 * p + 1], d[2 * p + 2]
        d6, d7 = d[2 * p + 3 : 3 * p + 3], d[3 * p + 3 :]

        dt = d6 + d7
        c = d7 - d6
        dt_safe = np.maximum(dt, 1e-14)
        inv_dt = 1.0 / dt_safe
        kappa = d5 / (1.0 + d5 * inv_dt.sum())

        # reduced u-block after eliminating t (Sherman-Morrison on the t-block)
        W = d1 + d2
        M = F2 + (S * W[None, :]) @ S + (d3 + d4) * np.outer(q, q)
        diag_add = dt - c * c * inv_dt
        M[np.arange(p), np.arange(p)] += diag_add
        v = c * inv_dt
        M += kappa * np.outer(v, v)

        try:
            chol = cho_factor(M, lower=True, check_finite=False)
        except LinAlgError:
            jitter = 1e-12 * max(1.0, float(np.trace(M)) / p)
            ok = False
            for _ in range(8):
                try:
                    chol = cho_factor(
                        M + jitter * np.eye(p), lower=True, check_finite=False
                    )
                    ok = True
                    break
                except LinAlgError:
                    jitter *= 100.0
            if not ok:
                break

        def solve_step(rc):
            # Newton direction for residual targets (rd, rp, rc)
            g = (z * rp - rc) / s_safe
            g_u, g_t = apply_AT(g)
            r_u = -rd_u - g_u
            r_t = -rd_t - g_t
            # eliminate t: T = diag(dt) + d5 * 11', C = diag(c)
            Tinv_rt = _sm_solve(inv_dt, d5, r_t)
            rhs = r_u - c * Tinv_rt
            du = cho_solve(chol, rhs, check_finite=False)
            dtv = _sm_solve(inv_dt, d5, r_t - c * du)
            dAu = apply_A(du, dtv)
            dz = d * dAu + (z * rp - rc) / s_safe
            ds = -rp - dAu
            return du, dtv, dz, ds

        # predictor
        du_a, dt_a, dz_a, ds_a = solve_step(s * z)
        ap = _max_step(s, ds_a)
        ad = _max_step(z, dz_a)
        mu_aff = float((s + ap * ds_a) @ (z + ad * dz_a)) / m
        sigma = (mu_aff / max(mu, 1e-300)) ** 3

        # corrector
        rc = s * z + ds_a * dz_a - sigma * mu
        du, dtv, dz, ds = solve_step(rc)
        ap = min(1.0, 0.995 * _max_step(s, ds))
        ad = min(1.0, 0.995 * _max_step(z, dz))
        u += ap * du
        t += ap * dtv
        s += ap * ds
        z += ad * dz
        s = np.maximum(s, 1e-300)
        z = np.maximum(z, 1e-300)

    kkt, u_b, z_b, s_b, t_b = best
    u_p, kkt_p = _polish(F2, S, q, b, x, u_b, z_b, s_b, t_b, apply_A)
    if kkt_p < kkt:
        u_b, kkt = u_p, kkt_p
    return QPResult(
        u=u_b,
        converged=kkt <= tol,
        n_iter=n_iter,
        kkt_residual=kkt,
        max_violation=0.0,
        objective=float(u_b @ F @ u_b),
    )


def _sm_solve(inv_dt, d5, y):
    """(diag(dt) + d5 11')^{-1} y via Sherman-Morrison, given 1/dt."""
    t0 = inv_dt * y
    corr = d5 * t0.sum() / (1.0 + d5 * inv_dt.sum())
    return t0 - corr * inv_dt


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def _polish(F2, S, q, b, x, u, z, s, t, apply_A):
    """Equality-constrained refinement on the apparent active set."""
    p = x.size
    m = b.size
    # near convergence the active constraints have z >> s
    act = (z >= s) & (z > 1e-10)
    if not np.any(act) or act.sum() > 3 * p:
        return u, np.inf

    idx = np.flatnonzero(act)
    # dense rows of A for the active set only
    rows = np.zeros((idx.size, 2 * p))
    for r, i in enumerate(idx):
        if i < p:
            rows[r, :p] = S[i]
        elif i < 2 * p:
            rows[r, :p] = -S[i - p]
        elif i == 2 * p:
            rows[r, :p] = q
        elif i == 2 * p + 1:
            rows[r, :p] = -q
        elif i == 2 * p + 2:
            rows[r, p:] = 1.0
        elif i < 3 * p + 3:
            j = i - (2 * p + 3)
            rows[r, j] = 1.0
            rows[r, p + j] = -1.0
        else:
            j = i - (3 * p + 3)
            rows[r, j] = -1.0
            rows[r, p + j] = -1.0

    H = np.zeros((2 * p, 2 * p))
    H[:p, :p] = F2
    na = idx.size
    KKT = np.zeros((2 * p + na, 2 * p + na))
    KKT[: 2 * p, : 2 * p] = H
    KKT[: 2 * p, 2 * p :] = rows.T
    KKT[2 * p :, : 2 * p] = rows
    rhs = np.concatenate([np.zeros(2 * p), b[idx]])
    try:
        sol, *_ = np.linalg.lstsq(KKT, rhs, rcond=None)
    except np.linalg.LinAlgError:
        return u, np.inf
    w = sol[: 2 * p]
    lam_act = sol[2 * p :]
    if np.any(lam_act < -1e-9):
        return u, np.inf
    u_new, t_new = w[:p], w[p:]
    slack = b - apply_A(u_new, t_new)
    if np.min(slack) < -1e-9:
        return u, np.inf
    z_new = np.zeros(m)
    z_new[idx] = np.maximum(lam_act, 0.0)
    # recompute the KKT residual at the polished point
    v1 = z_new[:p]
    v2 = z_new[p : 2 * p]
    v3, v4, v5 = z_new[2 * p], z_new[2 * p + 1], z_new[2 * p + 2]
    v6 = z_new[2 * p + 3 : 3 * p + 3]
    v7 = z_new[3 * p + 3 :]
    rd_u = F2 @ u_new + S @ (v1 - v2) + q * (v3 - v4) + v6 - v7
    rd_t = v5 - v6 - v7
    comp = np.max(np.maximum(slack, 0.0) * z_new)
    kkt = max(
        float(np.max(np.abs(rd_u))),
        float(np.max(np.abs(rd_t))),
        float(max(-np.min(slack), 0.0)),
        float(comp),
    )
    return u_new, kkt
