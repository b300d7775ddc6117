"""
Path Engine
Forward Euler prediction sweep along the theta grid, the mean velocity m_hat,
the optimality-distance estimate O_hat_d and the distance O_d to a reference.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import OptvoError, ProblemMismatchError
from .kkt import assemble_gamma
from .models import GammaMatrix, ParametricPath, ThetaGrid, Trajectory
from .problems import ProblemDefinition
from .tuner import reconstruct_b

logger = logging.getLogger(__name__)


def euler_step(
    problem: ProblemDefinition,
    x: np.ndarray,
    b: np.ndarray,
    c: np.ndarray,
    delta_theta: float,
) -> Tuple[np.ndarray, np.ndarray, GammaMatrix]:
    """One step x + delta_theta * Gamma(x, b) c; returns (next point, velocity, Gamma)"""
    gamma = assemble_gamma(problem, x, b)
    velocity = gamma.apply(c)
    return x + delta_theta * velocity, velocity, gamma


def euler_predict(
    problem: ProblemDefinition,
    grid: ThetaGrid,
    c: ParametricPath,
    b0: Optional[Sequence[float]] = None,
    keep_gammas: bool = False,
) -> Trajectory:
    """
    Predict the KKT trajectory under the log-rate path c.

    Args:
        problem: Problem instance
        grid: Theta grid shared with c
        c: Log-rates on the grid nodes
        b0: Weights at theta = 0 (problem.p0 when omitted)
        keep_gammas: Also keep Gamma at every node, terminal node included, for tuning

    Returns:
        Trajectory with points, sweep velocities and m_hat
    """
    if c.grid.L != grid.L or c.grid.delta_theta != grid.delta_theta:
        raise ValueError("c is defined on a different grid")
    if c.M != problem.M:
        raise ValueError(f"c has {c.M} components, problem has {problem.M} agents")
    b0 = problem.p0 if b0 is None else np.asarray(b0, dtype=float)
    weights = reconstruct_b(c, b0)

    L, dt = grid.L, grid.delta_theta
    points = np.empty((L + 1, problem.M, problem.N))
    velocities = np.empty((L, problem.M, problem.N))
    gammas: List[np.ndarray] = []
    points[0] = problem.initial_solution().blocks

    for j in range(L):
        try:
            points[j + 1], velocities[j], gamma = euler_step(problem, points[j], weights[j], c.values[j], dt)
            problem.check_domain(points[j + 1])
        except OptvoError as err:
            raise err.add_context(node=j)
        if keep_gammas:
            gammas.append(gamma.matrix)
    if keep_gammas:
        try:
            gammas.append(assemble_gamma(problem, points[L], weights[L]).matrix)
        except OptvoError as err:
            raise err.add_context(node=L)

    m_hat = velocities.reshape(L, -1).mean(axis=0)
    logger.debug("Euler sweep over %d nodes done for %s", L, problem.identity)
    return Trajectory(
        grid=grid,
        points=points,
        velocities=velocities,
        m_hat=m_hat,
        weights=weights,
        problem_id=problem.identity,
        path=c,
        gammas=np.stack(gammas) if keep_gammas else None,
    )


# ==================== Metrics ====================

def ohat_metric(traj: Trajectory, scaled: bool = True) -> float:
    """sum_j ||phi_j - m_hat||^2 over the stored velocities, times delta_theta when scaled"""
    deviation = traj.velocities.reshape(traj.grid.L, -1) - traj.m_hat
    raw = float(np.sum(deviation ** 2))
    return raw * traj.grid.delta_theta if scaled else raw


def od_against(traj: Trajectory, reference: Trajectory) -> float:
    """Euclidean distance between terminal points"""
    if traj.problem_id != reference.problem_id:
        raise ProblemMismatchError(
            "trajectories belong to different problems",
            trajectory=traj.problem_id,
            reference=reference.problem_id,
        )
    if abs(traj.grid.tau - reference.grid.tau) > 1e-12 * reference.grid.tau:
        raise ProblemMismatchError(
            "trajectories have different horizons",
            trajectory=traj.grid.tau,
            reference=reference.grid.tau,
        )
    return float(np.linalg.norm(traj.terminal.flat - reference.terminal.flat))


def curvature(traj: Trajectory) -> float:
    """max_j ||x_{j+1} - 2 x_j + x_{j-1}|| / delta_theta^2"""
    if traj.grid.L < 2:
        return 0.0
    flat = traj.points.reshape(traj.grid.L + 1, -1)
    second = flat[2:] - 2.0 * flat[1:-1] + flat[:-2]
    return float(np.linalg.norm(second, axis=1).max() / traj.grid.delta_theta ** 2)


def feasibility_drift(problem: ProblemDefinition, traj: Trajectory) -> np.ndarray:
    """||sum_m h_m(x_m(theta_j)) - u||_1 at every node"""
    return np.array([np.abs(problem.constraint_residual(p)).sum() for p in traj.points])


def euler_error_bound(traj: Trajectory) -> float:
    """(delta_theta^2 / 2) sum_j ||x''_j|| with x'' from differences of the stored velocities"""
    if traj.grid.L < 2:
        return 0.0
    flat = traj.velocities.reshape(traj.grid.L, -1)
    accel = np.diff(flat, axis=0) / traj.grid.delta_theta
    return float(0.5 * traj.grid.delta_theta ** 2 * np.linalg.norm(accel, axis=1).sum())


def velocity_deviation_bound(traj: Trajectory) -> float:
    """delta_theta * sum_j ||phi_j - m_hat||"""
    deviation = traj.velocities.reshape(traj.grid.L, -1) - traj.m_hat
    return float(traj.grid.delta_theta * np.linalg.norm(deviation, axis=1).sum())
