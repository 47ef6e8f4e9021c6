"""Independent reference implementations used to cross-check the package.

Nothing here shares code with cbfcert internals: the QP oracles go through
scipy and literal grid enumeration, and the samplers are plain rejection
sampling.
"""

import numpy as np
from scipy.optimize import minimize


def make_feasible_qp(rng, dim, n_cons):
    """Random constraint system with a certified feasible point.

    Roughly half the constraints are tight at the witness point so the
    optimum regularly sits on the boundary.
    """
    a = rng.uniform(-2.0, 2.0, size=(n_cons, dim))
    witness = rng.uniform(-2.0, 2.0, size=dim)
    margin = rng.uniform(0.0, 1.5, size=n_cons) * rng.integers(0, 2, size=n_cons)
    b = a @ witness - margin
    return a, b, witness


def qp_oracle_slsqp(a, b, start):
    """Minimum-norm feasible point via scipy's SLSQP (independent solver).

    Candidates are validated on feasibility directly instead of trusting the
    success flag (SLSQP reports line-search stalls near tight optima); the
    best feasible iterate across several starts is returned.
    """
    dim = a.shape[1]
    start = np.asarray(start, dtype=float)
    constraints = [
        {"type": "ineq", "fun": (lambda u, k=k: float(a[k] @ u - b[k]))}
        for k in range(a.shape[0])
    ]
    best_obj = np.inf
    best_u = None
    for x0 in (start, np.zeros(dim), 0.5 * start):
        res = minimize(
            lambda u: float(u @ u),
            x0,
            jac=lambda u: 2.0 * u,
            method="SLSQP",
            constraints=constraints,
            options={"maxiter": 1000, "ftol": 1e-12},
        )
        u = np.asarray(res.x)
        if np.min(a @ u - b, initial=0.0) >= -1e-7 and float(u @ u) < best_obj:
            best_obj = float(u @ u)
            best_u = u
    assert best_u is not None, "SLSQP oracle produced no feasible candidate"
    return best_u, best_obj


def qp_grid_oracle_2d(a, b, lo=-5.0, hi=5.0, step=1e-3, chunk=64):
    """Literal exhaustive grid search over [lo, hi]^2 (objective ||u||^2).

    Returns (best_objective, best_point); objective is inf when no grid point
    is feasible.
    """
    axis = np.arange(lo, hi + step / 2.0, step)
    best_obj = np.inf
    best_pt = None
    sq = axis * axis
    for start in range(0, axis.size, chunk):
        rows = axis[start : start + chunk]
        pts0 = np.repeat(rows, axis.size)
        pts1 = np.tile(axis, rows.size)
        obj = np.repeat(sq[start : start + chunk], axis.size) + np.tile(sq, rows.size)
        feas = np.ones(pts0.size, dtype=bool)
        for k in range(a.shape[0]):
            feas &= a[k, 0] * pts0 + a[k, 1] * pts1 >= b[k] - 1e-12
        if not np.any(feas):
            continue
        obj = np.where(feas, obj, np.inf)
        idx = int(np.argmin(obj))
        if obj[idx] < best_obj:
            best_obj = float(obj[idx])
            best_pt = np.array([pts0[idx], pts1[idx]])
    return best_obj, best_pt


def kkt_residuals(a, b, u, duals):
    """(stationarity, complementarity, dual-sign, primal-violation) residuals.

    Convention: at the optimum u equals the dual combination sum(lambda_k a_k).
    """
    stationarity = float(np.max(np.abs(u - a.T @ duals), initial=0.0))
    slack = a @ u - b
    complementarity = float(np.max(np.abs(duals * slack), initial=0.0))
    dual_sign = float(max(0.0, -np.min(duals, initial=0.0)))
    primal = float(max(0.0, -np.min(slack, initial=0.0)))
    return stationarity, complementarity, dual_sign, primal


def ball_samples_rejection(rng, radius, n, dim=2):
    """Uniform samples from a ball via rejection from the bounding cube."""
    out = np.empty((n, dim))
    filled = 0
    while filled < n:
        cand = rng.uniform(-radius, radius, size=(2 * (n - filled) + 8, dim))
        keep = cand[np.einsum("ij,ij->i", cand, cand) <= radius * radius]
        take = min(len(keep), n - filled)
        out[filled : filled + take] = keep[:take]
        filled += take
    return out


def sampled_disturbance_sup(grad, w_bar, rng, n=10_000):
    """Monte Carlo under-approximation of sup |grad . (w_i - w_j)| over two balls.

    A linear functional over a ball is maximized on the boundary, so the
    candidate pairs are drawn from the bounding spheres; the sampled maximum
    still only under-approximates the true supremum.
    """
    dim = grad.size
    wi = rng.standard_normal((n, dim))
    wj = rng.standard_normal((n, dim))
    wi *= w_bar / np.linalg.norm(wi, axis=1, keepdims=True)
    wj *= w_bar / np.linalg.norm(wj, axis=1, keepdims=True)
    return float(np.max(np.abs((wi - wj) @ grad)))


def pairwise_variance_definition(x):
    """O(P^2) literal evaluation of the mean squared pair difference."""
    x = np.asarray(x, dtype=float)
    p = x.size
    total = 0.0
    for i in range(p):
        for j in range(i + 1, p):
            total += (x[i] - x[j]) ** 2
    return total / (p * (p - 1))
