"""Per-step admissible-control computation.

For every unordered agent pair the forward-invariance condition
hdot_tilde + kappa * h_tilde >= gamma is linear in the joint control once the
propagation vector is held fixed within the step, so the admissible set is a
polyhedron and the minimum-effort input is the projection of the origin onto
it. The solver is Hildreth dual coordinate ascent on that projection; when the
polyhedron is empty it re-solves with a shared slack variable and reports how
much relaxation was needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import ConfigError, SolverError
from .safety import PairTable, SafetyParams
from .sysmodel import ControlVector, SystemState

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE_RELAXED = "infeasible_relaxed"

# Solver tolerances (absolute; constraint data is O(1)-O(10) in practice).
TOL_PRIMAL = 1e-9
TOL_ACTIVE = 1e-7
RELAX_RHO = 1e6

_MAX_SWEEPS = 2_000
_LAMBDA_DIVERGENCE = 1e10
_MAX_ENUM_SUBSETS = 50_000


@dataclass(frozen=True)
class QPProblem:
    """min ||u||^2 subject to a_k^T u >= b_k for every row k.

    ``pair_labels[k]`` names the agent pair behind row k (None for auxiliary
    rows such as control box bounds).
    """

    dim: int
    hessian_diag: np.ndarray
    a_matrix: np.ndarray
    b_vector: np.ndarray
    pair_labels: tuple[tuple[int, int] | None, ...]

    def __post_init__(self) -> None:
        a = np.asarray(self.a_matrix, dtype=float).reshape(-1, self.dim)
        b = np.asarray(self.b_vector, dtype=float).reshape(-1)
        if a.shape[0] != b.shape[0] or a.shape[0] != len(self.pair_labels):
            raise ConfigError("constraint rows, bounds and labels must align")
        a.setflags(write=False)
        b.setflags(write=False)
        h = np.asarray(self.hessian_diag, dtype=float)
        h.setflags(write=False)
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "b_vector", b)
        object.__setattr__(self, "hessian_diag", h)

    @property
    def n_constraints(self) -> int:
        return self.a_matrix.shape[0]


@dataclass(frozen=True)
class QPSolution:
    u_star: np.ndarray
    active_set: tuple[int, ...]
    status: str
    slack_used: float
    duals: np.ndarray


def _rhs_vector(
    x: np.ndarray,
    u_prev: np.ndarray,
    params: SafetyParams,
    model,
    table: PairTable,
) -> np.ndarray:
    """Right-hand side b per pair: gamma - grad_h . (f_i - f_j) - kappa * h,
    minus the frozen propagation-derivative term when ``freeze_adot`` is on.
    """
    idx_i, idx_j = table.idx_i, table.idx_j
    if model.identity_actuation:
        # Zero drift: only the margin and decay terms remain.
        b = table.gamma - params.kappa * table.h
        drift_all = None
    else:
        drift_all = model.drift_all(x)
        ddrift = drift_all[idx_i] - drift_all[idx_j]
        b = (
            table.gamma
            - np.einsum("ij,ij->i", table.grad, ddrift)
            - params.kappa * table.h
        )
    if params.freeze_adot and params.psi > 0:
        if model.identity_actuation:
            xdot = u_prev
        else:
            xdot = drift_all + u_prev @ model.actuation(None).T
        dxdot = xdot[idx_i] - xdot[idx_j]
        du_prev = u_prev[idx_i] - u_prev[idx_j]
        q = table.dist_sq
        root = np.sqrt(q + params.reg_eps**2)
        phi = np.exp(-q) / root
        dphi = -np.exp(-q) * (1.0 / root + 0.5 / root**3)
        along = np.einsum("ij,ij->i", table.diff, dxdot)
        a_dot = phi[:, None] * dxdot + (2.0 * dphi * along)[:, None] * table.diff
        b = b - params.psi * np.einsum("ij,ij->i", a_dot, du_prev)
    return b


def _lhs_matrix(params: SafetyParams, model, table: PairTable, dim: int) -> np.ndarray:
    """Constraint rows: pair (i, j) places +/-(g^T grad_h + psi*kappa*A) in the
    blocks of agents i and j (exact negation because g is state-independent
    for the supported models)."""
    m = model.control_dim
    if model.identity_actuation:
        gT_grad = table.grad
    else:
        gT_grad = table.grad @ model.actuation(None)
    if params.psi > 0:
        block = gT_grad + (params.psi * params.kappa) * table.prop
    else:
        block = gT_grad
    n_pairs = len(table.h)
    a_matrix = np.zeros((n_pairs, dim))
    for k in range(n_pairs):
        i, j = int(table.idx_i[k]), int(table.idx_j[k])
        a_matrix[k, i * m : (i + 1) * m] = block[k]
        a_matrix[k, j * m : (j + 1) * m] = -block[k]
    return a_matrix


def assemble_constraints(
    state: SystemState,
    u_prev: ControlVector,
    params: SafetyParams,
    w_bar: float,
    model,
    table: PairTable | None = None,
) -> QPProblem:
    """Build one inequality row per unordered agent pair.

    Row blocks: agents i and j of a pair receive +/-(g^T grad_h + psi*kappa*A);
    everyone else is zero. The right side collects the disturbance margin, the
    drift contribution and kappa * h. With ``freeze_adot`` the time derivative
    of the propagation vector, evaluated along the previous step's control, is
    folded into the right side as well (by default it is treated as zero,
    which is exact in the piecewise-constant-control limit).

    Optional control box bounds append rows with a ``None`` pair label.
    """
    x = state.x
    n_agents, n = x.shape
    m = model.control_dim
    dim = n_agents * m
    if params.psi > 0 and m != n:
        raise ConfigError("psi coupling requires control_dim == state_dim")
    if table is None:
        table = PairTable(x, params, w_bar)
    n_pairs = len(table.h)
    b = _rhs_vector(x, u_prev.u, params, model, table)
    a_pairs = _lhs_matrix(params, model, table, dim)
    labels: list[tuple[int, int] | None] = [
        (int(table.idx_i[k]), int(table.idx_j[k])) for k in range(n_pairs)
    ]
    if params.control_bound is not None:
        bound = params.control_bound
        box_a = np.vstack([np.eye(dim), -np.eye(dim)])
        box_b = np.full(2 * dim, -bound)
        a_matrix = np.vstack([a_pairs, box_a])
        b_vector = np.concatenate([b, box_b])
        labels.extend([None] * (2 * dim))
    else:
        a_matrix = a_pairs
        b_vector = b
    return QPProblem(
        dim=dim,
        hessian_diag=np.ones(dim),
        a_matrix=a_matrix,
        b_vector=b_vector,
        pair_labels=tuple(labels),
    )


def _hildreth(a: np.ndarray, b: np.ndarray, tol: float):
    """Dual coordinate ascent for min ||u||^2 s.t. a_k^T u >= b_k.

    Returns (u, duals, converged). Divergence of the duals certifies primal
    infeasibility (the dual is unbounded above exactly when no feasible point
    exists).
    """
    n_c, dim = a.shape
    q = np.einsum("ij,ij->i", a, a)
    lam = np.zeros(n_c)
    u = np.zeros(dim)
    order = [k for k in range(n_c) if q[k] > 0.0]
    for _ in range(_MAX_SWEEPS):
        max_step = 0.0
        for k in order:
            residual = b[k] - a[k] @ u
            new_lam = lam[k] + residual / q[k]
            if new_lam < 0.0:
                new_lam = 0.0
            delta = new_lam - lam[k]
            if delta != 0.0:
                u += delta * a[k]
                lam[k] = new_lam
                step = abs(delta) * np.sqrt(q[k])
                if step > max_step:
                    max_step = step
        violation = float(np.max(b - a @ u, initial=0.0))
        if violation <= tol and max_step <= 1e-12 * (1.0 + float(np.max(lam, initial=0.0))):
            return u, lam, True
        if np.max(lam, initial=0.0) > _LAMBDA_DIVERGENCE:
            return u, lam, False
    return u, lam, False


def _enumerate_kkt(rows: np.ndarray, b_vec: np.ndarray, inv_h: np.ndarray):
    """Exact optimum of min 1/2 v^T H^-1-weighted norm s.t. rows v >= b_vec.

    Enumerates candidate active sets (sizes up to the variable count), solves
    each equality-constrained system and keeps the KKT-consistent candidate.
    Returns (v, duals) or None when the polyhedron is empty. Exact for any
    conditioning, which makes it both the fallback for stalled dual ascent
    and the feasibility decision.
    """
    n_rows, dim_total = rows.shape
    live = [k for k in range(n_rows) if float(rows[k] @ rows[k]) > 0.0]
    max_active = min(len(live), dim_total)
    total = sum(_n_choose_k(len(live), size) for size in range(max_active + 1))
    if total > _MAX_ENUM_SUBSETS:
        raise SolverError(
            f"QP with {n_rows} constraints exceeds the active-set "
            "enumeration budget; please report this instance"
        )
    scale = 1.0 + float(np.max(np.abs(b_vec), initial=0.0))
    for size in range(max_active + 1):
        for subset in combinations(live, size):
            if not subset:
                if np.min(-b_vec, initial=0.0) >= -1e-8 * scale:
                    return np.zeros(dim_total), np.zeros(n_rows)
                continue
            s = list(subset)
            sub = rows[s]
            gram = (sub * inv_h) @ sub.T
            try:
                mu, *_ = np.linalg.lstsq(gram, b_vec[s], rcond=None)
            except np.linalg.LinAlgError:
                continue
            if np.any(mu < -1e-9 * scale):
                continue
            v = inv_h * (sub.T @ mu)
            if np.max(np.abs(sub @ v - b_vec[s]), initial=0.0) > 1e-7 * scale:
                continue
            if np.min(rows @ v - b_vec, initial=0.0) < -1e-8 * scale:
                continue
            # A KKT-consistent point of a strictly convex QP is the unique
            # global optimum, so the first valid candidate wins.
            duals = np.zeros(n_rows)
            duals[s] = np.maximum(mu, 0.0)
            return v, duals
    return None


def _solve_relaxed(a: np.ndarray, b: np.ndarray, rho: float):
    """Exact solve of min ||u||^2 + rho*s^2 s.t. a_k^T u + s >= b_k, s >= 0.

    The augmented problem is tiny and always feasible, so active-set
    enumeration applies directly.
    """
    n_c, dim = a.shape
    rows = np.zeros((n_c + 1, dim + 1))
    rows[:n_c, :dim] = a
    rows[:n_c, dim] = 1.0
    rows[n_c, dim] = 1.0
    b_ext = np.append(b, 0.0)
    inv_h = np.append(np.ones(dim), 1.0 / rho)
    best = _enumerate_kkt(rows, b_ext, inv_h)
    if best is None:
        raise SolverError("relaxed QP enumeration found no KKT point")
    v, duals = best
    return v[:dim], max(float(v[dim]), 0.0), duals[:n_c]


def _n_choose_k(n: int, k: int) -> int:
    out = 1
    for i in range(k):
        out = out * (n - i) // (i + 1)
    return out


def _solve_arrays(a: np.ndarray, b: np.ndarray, dim: int, tol: float):
    """Shared solver core; returns (u, duals, status, slack_used)."""
    zero_rows = np.einsum("ij,ij->i", a, a) == 0.0
    structurally_infeasible = bool(np.any(b[zero_rows] > tol))

    if not structurally_infeasible:
        if a.shape[0] == 0 or float(np.max(b, initial=0.0)) <= tol:
            # The unconstrained optimum u = 0 already satisfies everything.
            return np.zeros(dim), np.zeros(a.shape[0]), STATUS_OPTIMAL, 0.0
        u, lam, converged = _hildreth(a, b, tol)
        if converged:
            return u, lam, STATUS_OPTIMAL, 0.0
        # Dual ascent stalls on near-parallel constraint pairs; fall back to
        # the exact enumeration, which also decides feasibility outright.
        exact = _enumerate_kkt(a, b, np.ones(dim))
        if exact is not None:
            u, duals = exact
            return u, duals, STATUS_OPTIMAL, 0.0

    u, slack, duals = _solve_relaxed(a, b, RELAX_RHO)
    if slack <= 1e-9:
        return u, duals, STATUS_OPTIMAL, 0.0
    return u, duals, STATUS_INFEASIBLE_RELAXED, slack


def solve_qp(problem: QPProblem, tol: float = TOL_PRIMAL) -> QPSolution:
    """Minimum-norm point of the constraint polyhedron, or its relaxation.

    Feasible problems are solved by Hildreth iteration; if the duals diverge
    (an infeasibility certificate) the problem is re-solved with a shared
    slack s >= 0 weighted by ``RELAX_RHO``, and the answer is flagged
    ``infeasible_relaxed`` with ``slack_used`` set to the optimal slack.
    """
    a, b = problem.a_matrix, problem.b_vector
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite constraint data")
    u, duals, status, slack = _solve_arrays(a, b, problem.dim, tol)
    return QPSolution(
        u_star=u,
        active_set=_active_set(a, b, u),
        status=status,
        slack_used=slack,
        duals=duals,
    )


def fast_control(
    x: np.ndarray,
    u_prev: np.ndarray,
    params: SafetyParams,
    model,
    table: PairTable,
) -> tuple[np.ndarray, str, float]:
    """Hot-path variant of :func:`control_step` on raw arrays.

    Skips constraint-matrix assembly entirely whenever every pair constraint
    has a non-positive right-hand side (the joint zero control is then
    optimal, including under box bounds). Behaviour is identical to
    ``assemble_constraints`` + ``solve_qp``; the rollout engine relies on that
    equivalence, which the test suite checks directly.
    """
    n_agents = x.shape[0]
    m = model.control_dim
    b = _rhs_vector(x, u_prev, params, model, table)
    if float(np.max(b, initial=0.0)) <= TOL_PRIMAL:
        return np.zeros((n_agents, m)), STATUS_OPTIMAL, 0.0
    dim = n_agents * m
    a = _lhs_matrix(params, model, table, dim)
    if params.control_bound is not None:
        a = np.vstack([a, np.eye(dim), -np.eye(dim)])
        b = np.concatenate([b, np.full(2 * dim, -params.control_bound)])
    u, _, status, slack = _solve_arrays(a, b, dim, TOL_PRIMAL)
    if not np.all(np.isfinite(u)):
        raise SolverError("QP returned a non-finite control")
    return u.reshape(n_agents, m), status, slack


def _active_set(a: np.ndarray, b: np.ndarray, u: np.ndarray) -> tuple[int, ...]:
    if a.shape[0] == 0:
        return ()
    residual = np.abs(a @ u - b)
    return tuple(int(k) for k in np.nonzero(residual <= TOL_ACTIVE)[0])


def control_step(
    state: SystemState,
    u_prev: ControlVector,
    params: SafetyParams,
    w_bar: float,
    model,
    table: PairTable | None = None,
) -> tuple[ControlVector, QPSolution]:
    """Assemble the pairwise constraints and solve for the joint control."""
    problem = assemble_constraints(state, u_prev, params, w_bar, model, table)
    solution = solve_qp(problem)
    if not np.all(np.isfinite(solution.u_star)):
        raise SolverError("QP returned a non-finite control")
    u = solution.u_star.reshape(state.x.shape[0], model.control_dim)
    return ControlVector(u=u), solution
