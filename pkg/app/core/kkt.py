"""
KKT Trajectory Mathematics
Multiplier recovery, the per-agent v/G/D quantities, assembly of the
sensitivity matrix Gamma with x'(theta) = Gamma(theta) c(theta), the KKT
residual and a damped Newton corrector on the joint (x, lambda) system.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, List, Optional, Sequence

import numpy as np

from .exceptions import (
    AssumptionViolation,
    ConvergenceError,
    DomainError,
    LineSearchError,
    OptvoError,
)
from .linalg import (
    RCOND_THRESHOLD,
    DenseFactor,
    batched_rcond,
    block_solve,
    diagonal_rcond,
    require_regular,
    solve_small,
)
from .models import AgentLocals, AssumptionReport, BlockPoint, GammaMatrix, KKTResidual
from .problems import ProblemDefinition

logger = logging.getLogger(__name__)

MIN_STEP = 2.0 ** -20
ARMIJO = 1e-4
# below this merit a failed line search means the iterate is already at round-off level
ROUNDOFF_MERIT = 1e3 * np.finfo(float).eps


def _blocks(problem: ProblemDefinition, x: Any) -> np.ndarray:
    X = x.blocks if isinstance(x, BlockPoint) else np.atleast_2d(np.asarray(x, dtype=float))
    if X.shape != (problem.M, problem.N):
        raise ValueError(f"Expected point of shape {(problem.M, problem.N)}, got {X.shape}")
    return X


def _weights(problem: ProblemDefinition, b: Sequence[float]) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.shape != (problem.M,):
        raise ValueError(f"weights must have length {problem.M}, got shape {b.shape}")
    return b


# ==================== Multipliers ====================

def _velocity_directions(problem: ProblemDefinition, X: np.ndarray) -> np.ndarray:
    """v_m = -J_m^{-1} grad f(x_m) for every agent"""
    problem.check_domain(X)
    grad = problem.gradients(X)
    J = problem.jacobians_t(X)
    return -block_solve(J, grad, "J_m", assumption="II", quantity="J_m")


def compute_multiplier(problem: ProblemDefinition, x: Any, b: Sequence[float], m: int) -> np.ndarray:
    """lambda = -b_m J_m^{-1} grad f(x_m) as seen by agent m"""
    X = _blocks(problem, x)
    b = _weights(problem, b)
    rows = np.array([m])
    problem.check_domain(X[rows], rows)
    grad = problem.gradients(X[rows], rows)
    J = problem.jacobians_t(X[rows], rows)
    try:
        v = -block_solve(J, grad, "J_m", assumption="II", quantity="J_m")[0]
    except AssumptionViolation as err:
        err.context["agents"] = [int(m)]
        raise
    return b[m] * v


def agent_multipliers(problem: ProblemDefinition, x: Any, b: Sequence[float]) -> np.ndarray:
    """Multiplier estimate of every agent, shape (M, N)"""
    X = _blocks(problem, x)
    b = _weights(problem, b)
    return b[:, None] * _velocity_directions(problem, X)


def multiplier_consistency(problem: ProblemDefinition, x: Any, b: Sequence[float]) -> float:
    """max over agent pairs of ||lambda^(m) - lambda^(m')|| / (1 + ||lambda^(1)||)"""
    lam = agent_multipliers(problem, x, b)
    spread = np.linalg.norm(lam[:, None, :] - lam[None, :, :], axis=-1).max()
    return float(spread / (1.0 + np.linalg.norm(lam[0])))


# ==================== Gamma assembly ====================

def agent_locals(problem: ProblemDefinition, x: Any) -> AgentLocals:
    """
    v_m, G_m = diag(v_m)^{-1} J_m^{-1} (hess f + sum_n v_{m,n} hess h_{m,n}) and D_m = J_m^T G_m^{-1}.

    None of them depends on the weights b.
    """
    X = _blocks(problem, x)
    problem.check_domain(X)
    grad = problem.gradients(X)
    hess = problem.hessians(X)
    J = problem.jacobians_t(X)
    hess_h = problem.constraint_hessians(X)

    v = -block_solve(J, grad, "J_m", assumption="II", quantity="J_m")
    require_regular(diagonal_rcond(v), "III", "diag(v_m)")
    curvature = hess + np.einsum("kn,knij->kij", v, hess_h)
    G = block_solve(J, curvature, "J_m", reuse_factorization=True) / v[:, :, None]
    # D_m^T = G_m^{-T} J_m
    D = np.transpose(
        block_solve(np.transpose(G, (0, 2, 1)), J, "G_m", assumption="III", quantity="G_m"),
        (0, 2, 1),
    )
    return AgentLocals(v=v, G=G, D=D, J=J)


def gamma_from_locals(locals_: AgentLocals) -> GammaMatrix:
    """gamma_{m'm} = -G_{m'}^{-1} ((sum_k D_k)^{-1} D_m - delta_{m'm} I) 1"""
    M, N = locals_.v.shape
    if M == 1:
        return GammaMatrix.zeros(1, N)
    sum_d = locals_.D.sum(axis=0)
    # column m of W is (sum_k D_k)^{-1} D_m 1
    d_ones = locals_.D.sum(axis=2).T
    W = solve_small(sum_d, d_ones, "sum_D", assumption="III", quantity="sum_D")
    rhs = np.broadcast_to(W, (M, N, M)).copy()
    rhs[np.arange(M), :, np.arange(M)] -= 1.0
    Z = block_solve(locals_.G, rhs, "G_m", reuse_factorization=True)
    return GammaMatrix(matrix=(-Z).reshape(M * N, M), M=M, N=N)


def assemble_gamma(problem: ProblemDefinition, x: Any, b: Optional[Sequence[float]] = None) -> GammaMatrix:
    """Sensitivity matrix at (x, b); b only enters through the KKT point and is accepted for symmetry"""
    if b is not None:
        _weights(problem, b)
    if problem.M == 1:
        _blocks(problem, x)
        return GammaMatrix.zeros(1, problem.N)
    return gamma_from_locals(agent_locals(problem, x))


def phi_eval(problem: ProblemDefinition, x: Any, b: Sequence[float], c_at_theta: Sequence[float]) -> BlockPoint:
    """Solution velocity Gamma(x, b) c"""
    c = np.asarray(c_at_theta, dtype=float)
    if c.shape != (problem.M,):
        raise ValueError(f"c must have length {problem.M}, got shape {c.shape}")
    return BlockPoint(assemble_gamma(problem, x, b).apply(c))


def gamma_invariants(gamma: GammaMatrix, J: np.ndarray) -> dict:
    """Relative norms of Gamma 1 and of sum_{m'} J_{m'}^T gamma_{m'm} for every column"""
    scale = max(np.linalg.norm(gamma.matrix), np.finfo(float).tiny)
    shift = np.linalg.norm(gamma.matrix.sum(axis=1))
    weighted = np.einsum("pin,pmi->mn", J, gamma.blocks)
    return {
        "uniform_shift": float(shift / scale),
        "column_null": float(np.linalg.norm(weighted, axis=1).max() / scale),
    }


# ==================== Residuals ====================

def kkt_residual(problem: ProblemDefinition, x: Any, b: Sequence[float]) -> KKTResidual:
    """(max_m ||b_m grad f + J_m lambda||, ||sum_m h_m - u||_1) with lambda taken from agent 1"""
    X = _blocks(problem, x)
    b = _weights(problem, b)
    lam = compute_multiplier(problem, X, b, 0)
    grad = problem.gradients(X)
    J = problem.jacobians_t(X)
    stationarity = b[:, None] * grad + np.einsum("kin,n->ki", J, lam)
    feasibility = np.abs(problem.constraints(X).sum(axis=0) - problem.u).sum()
    return KKTResidual(float(np.linalg.norm(stationarity, axis=1).max()), float(feasibility))


def constraint_violation(problem: ProblemDefinition, x: Any) -> float:
    """||sum_m h_m(x_m) - u||_1"""
    return float(np.abs(problem.constraint_residual(_blocks(problem, x))).sum())


# ==================== Newton corrector ====================

@dataclass
class NewtonResult:
    x: BlockPoint
    lam: np.ndarray
    steps: int
    converged: bool
    stationarity: float
    feasibility: float
    history: List[float] = field(default_factory=list)
    reason: str = "converged"
    error: Optional[OptvoError] = None


def _kkt_functions(problem, X, lam, b):
    grad = problem.gradients(X)
    J = problem.jacobians_t(X)
    stat = b[:, None] * grad + np.einsum("kin,n->ki", J, lam)
    feas = problem.constraints(X).sum(axis=0) - problem.u
    return stat, feas, J


def _least_squares_multiplier(problem, X, b) -> np.ndarray:
    grad = problem.gradients(X)
    J = problem.jacobians_t(X)
    normal = np.einsum("kin,kip->np", J, J)
    rhs = -np.einsum("kin,ki->n", J, b[:, None] * grad)
    return solve_small(normal, rhs, "newton_init", assumption="II", quantity="sum J_m^T J_m")


def _kkt_matrix(problem, X, lam, b, J) -> np.ndarray:
    M, N = problem.M, problem.N
    lagrangian = b[:, None, None] * problem.hessians(X) + np.einsum(
        "n,knij->kij", lam, problem.constraint_hessians(X)
    )
    size = M * N + N
    K = np.zeros((size, size))
    for m in range(M):
        rows = slice(m * N, (m + 1) * N)
        K[rows, rows] = lagrangian[m]
        K[rows, M * N:] = J[m]
        K[M * N:, rows] = J[m].T
    return K


def newton_solve(
    problem: ProblemDefinition,
    x: Any,
    b: Sequence[float],
    max_steps: int = 20,
    tol: float = 1e-10,
    lam0: Optional[np.ndarray] = None,
) -> NewtonResult:
    """
    Damped Newton on b_m grad f + J_m lambda = 0, sum_m h_m - u = 0.

    Stationarity is measured relative to max_m ||b_m grad f(x_m)|| at the start
    point and feasibility in absolute L1. Failures are returned, not raised.
    A line search that stalls at round-off level counts as converged ("roundoff").

    Args:
        problem: Problem instance
        x: Start point
        b: Frozen weights
        max_steps: Newton iteration limit
        tol: Tolerance for both residuals
        lam0: Start multiplier (least-squares estimate when omitted)

    Returns:
        NewtonResult with the last iterate and the merit history
    """
    X = _blocks(problem, x).copy()
    b = _weights(problem, b)
    problem.check_domain(X)
    M, N = problem.M, problem.N

    start_error: Optional[AssumptionViolation] = None
    if lam0 is not None:
        lam = np.asarray(lam0, dtype=float).copy()
    else:
        try:
            lam = _least_squares_multiplier(problem, X, b)
        except AssumptionViolation as err:
            lam, start_error = np.zeros(N), err
    scale = float(np.linalg.norm(b[:, None] * problem.gradients(X), axis=1).max())
    scale = scale if scale > 0 else 1.0

    def merit_of(stat, feas):
        return float(np.sqrt(np.sum((stat / scale) ** 2) + np.sum(feas ** 2)))

    stat, feas, J = _kkt_functions(problem, X, lam, b)
    merit = merit_of(stat, feas)
    history = [merit]
    steps = 0

    def result(converged: bool, reason: str, error: Optional[OptvoError] = None) -> NewtonResult:
        return NewtonResult(
            x=BlockPoint(X),
            lam=lam,
            steps=steps,
            converged=converged,
            stationarity=float(np.linalg.norm(stat, axis=1).max()),
            feasibility=float(np.abs(feas).sum()),
            history=history,
            reason=reason,
            error=error,
        )

    if start_error is not None:
        return result(False, "singular", start_error.add_context(steps=0))

    while True:
        rel_stat = np.linalg.norm(stat, axis=1).max() / scale
        if rel_stat <= tol and np.abs(feas).sum() <= tol:
            return result(True, "converged")
        if steps >= max_steps:
            err = ConvergenceError(
                "Newton did not converge",
                steps=steps,
                stationarity=float(rel_stat),
                feasibility=float(np.abs(feas).sum()),
            )
            return result(False, "max_steps", err)

        factor = DenseFactor(_kkt_matrix(problem, X, lam, b, J), "kkt")
        if factor.singular:
            err = AssumptionViolation("III", "KKT matrix", rcond=factor.rcond, steps=steps)
            return result(False, "singular", err)
        delta = factor.solve(-np.concatenate([stat.reshape(-1), feas]))
        dx = delta[: M * N].reshape(M, N)
        dlam = delta[M * N:]

        t = 1.0
        while True:
            X_trial = X + t * dx
            lam_trial = lam + t * dlam
            try:
                problem.check_domain(X_trial)
                stat_t, feas_t, J_t = _kkt_functions(problem, X_trial, lam_trial, b)
                merit_t = merit_of(stat_t, feas_t)
            except DomainError:
                merit_t = np.inf
            if np.isfinite(merit_t) and merit_t <= (1.0 - ARMIJO * t) * merit:
                break
            t *= 0.5
            logger.debug("Newton step %d: halving to t=%.3g", steps + 1, t)
            if t < MIN_STEP:
                if merit <= ROUNDOFF_MERIT:
                    return result(True, "roundoff")
                err = LineSearchError(
                    "line search reached the minimum step",
                    step=t,
                    steps=steps,
                    merit=merit,
                )
                return result(False, "line_search", err)

        X, lam = X_trial, lam_trial
        stat, feas, J = stat_t, feas_t, J_t
        merit = merit_t
        history.append(merit)
        steps += 1
        logger.debug("Newton step %d: t=%.3g merit=%.3e", steps, t, merit)


def newton_correct(
    problem: ProblemDefinition,
    x: Any,
    b: Sequence[float],
    max_steps: int = 20,
    tol: float = 1e-10,
) -> BlockPoint:
    """Newton-corrected KKT point; raises ConvergenceError, LineSearchError or AssumptionViolation"""
    outcome = newton_solve(problem, x, b, max_steps=max_steps, tol=tol)
    if not outcome.converged:
        raise outcome.error
    return outcome.x


# ==================== Assumption diagnostics ====================

def check_assumptions(
    problem: ProblemDefinition,
    x: Any,
    b: Optional[Sequence[float]] = None,
    threshold: float = RCOND_THRESHOLD,
) -> AssumptionReport:
    """Worst reciprocal condition of every matrix the trajectory mathematics inverts; never raises"""
    X = _blocks(problem, x)
    problem.check_domain(X)
    J = problem.jacobians_t(X)
    rcond_J = batched_rcond(J)
    worst = {"J_m": int(np.argmin(rcond_J))}
    nan = float("nan")
    report = dict(rcond_G=nan, rcond_diag_v=nan, rcond_sum_D=nan, rcond_lagrangian_hessian=nan)
    if np.all(rcond_J >= threshold):
        with np.errstate(all="ignore"):
            v = -np.linalg.solve(J, problem.gradients(X)[..., None])[..., 0]
            rcond_v = diagonal_rcond(v)
            curvature = problem.hessians(X) + np.einsum("kn,knij->kij", v, problem.constraint_hessians(X))
            rcond_H = batched_rcond(curvature)
            report["rcond_diag_v"] = float(rcond_v.min())
            report["rcond_lagrangian_hessian"] = float(rcond_H.min())
            worst["diag(v_m)"] = int(np.argmin(rcond_v))
            worst["hessian"] = int(np.argmin(rcond_H))
            if np.all(rcond_v >= threshold):
                G = np.linalg.solve(J, curvature) / v[:, :, None]
                rcond_G = batched_rcond(G)
                report["rcond_G"] = float(rcond_G.min())
                worst["G_m"] = int(np.argmin(rcond_G))
                if np.all(rcond_G >= threshold) and problem.M > 1:
                    D = np.transpose(np.linalg.solve(np.transpose(G, (0, 2, 1)), J), (0, 2, 1))
                    report["rcond_sum_D"] = float(batched_rcond(D.sum(axis=0)[None])[0])
    for key, value in report.items():
        if np.isnan(value):
            report[key] = 0.0 if key != "rcond_sum_D" or problem.M > 1 else 1.0
    return AssumptionReport(
        rcond_J=float(rcond_J.min()),
        threshold=threshold,
        worst_agents=worst,
        **report,
    )
