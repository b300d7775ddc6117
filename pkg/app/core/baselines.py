"""
Baseline Solvers
Fine-grid benchmark, prediction-correction method and naive Newton on the
target problem, reported in the same RunReport format as OP-TVO.
"""

import logging
import time
from typing import Optional

import numpy as np

from .exceptions import OptvoError, ProblemMismatchError
from .kkt import newton_correct, newton_solve
from .linalg import CostCounter, cost_counters
from .models import (
    BenchmarkConfig,
    IterationRecord,
    PCMConfig,
    RunReport,
    RunStatus,
    SolverKind,
    Trajectory,
)
from .optvo import objective_and_violation
from .path_engine import euler_predict, euler_step, od_against, ohat_metric
from .problems import ProblemDefinition
from .tuner import init_c, psi_from_endpoints, reconstruct_b

logger = logging.getLogger(__name__)

# re-exported so callers can count any solver run
__all__ = [
    "cost_counters",
    "run_benchmark",
    "benchmark_report",
    "run_pcm",
    "run_naive_newton",
]


def _record(problem, x, counter: CostCounter, started: float, record_timings: bool,
            od: Optional[float], iteration: int = 1) -> IterationRecord:
    value, violation = objective_and_violation(problem, x)
    return IterationRecord(
        iteration=iteration,
        optimal_value=value,
        constraint_violation=violation,
        elapsed_time_s=time.perf_counter() - started if record_timings else 0.0,
        linear_solves=counter.linear_solves,
        od=od,
    )


# ==================== Benchmark ====================

def run_benchmark(
    problem: ProblemDefinition,
    cfg: Optional[BenchmarkConfig] = None,
    tau: float = 3.0,
    record_timings: bool = True,
) -> Trajectory:
    """
    Constant-rate Euler sweep on a fine grid, optionally Newton-polished at tau.

    Returns:
        Reference Trajectory; its stats hold the cost counters and elapsed time
    """
    cfg = cfg or BenchmarkConfig()
    grid = cfg.grid(tau)
    started = time.perf_counter()
    logger.info("Benchmark on %s: %d nodes, polish=%s", problem.identity, grid.L, cfg.polish)
    with cost_counters() as counter:
        c = init_c(grid, psi_from_endpoints(problem.p0, problem.ptau))
        try:
            traj = euler_predict(problem, grid, c)
        except OptvoError as err:
            raise err.add_context(solver=SolverKind.BENCHMARK.value)
        sweep_counts = counter.snapshot()
        if cfg.polish:
            try:
                polished = newton_correct(problem, traj.points[-1], problem.ptau,
                                          max_steps=cfg.polish_max_steps, tol=cfg.polish_tol)
            except OptvoError as err:
                raise err.add_context(solver=SolverKind.BENCHMARK.value, stage="polish")
            traj.polished = polished.blocks
    traj.stats = {
        **counter.snapshot(),
        "sweep": sweep_counts,
        "elapsed_time_s": time.perf_counter() - started if record_timings else 0.0,
    }
    return traj


def benchmark_report(problem: ProblemDefinition, traj: Trajectory) -> RunReport:
    """Single-row report for a benchmark trajectory; O_d is zero by definition"""
    value, violation = objective_and_violation(problem, traj.terminal)
    record = IterationRecord(
        iteration=1,
        optimal_value=value,
        constraint_violation=violation,
        elapsed_time_s=traj.stats.get("elapsed_time_s", 0.0),
        linear_solves=traj.stats.get("linear_solves", 0),
        od=0.0,
    )
    return RunReport(
        solver=SolverKind.BENCHMARK.value,
        problem=problem.identity,
        status=RunStatus.COMPLETED,
        records=[record],
        terminal_point=traj.terminal.blocks.tolist(),
        linear_solves=traj.stats.get("linear_solves", 0),
        factorizations=traj.stats.get("factorizations", 0),
        solves=traj.stats.get("solves", 0),
        metadata={
            "tau": traj.grid.tau,
            "delta_theta": traj.grid.delta_theta,
            "polished": traj.polished is not None,
        },
        trajectory=traj,
        history=[traj],
    )


# ==================== Prediction-correction ====================

def run_pcm(
    problem: ProblemDefinition,
    cfg: Optional[PCMConfig] = None,
    reference: Optional[Trajectory] = None,
    tau: float = 3.0,
    record_timings: bool = True,
) -> RunReport:
    """
    Euler predictor under constant log-rates, then up to corrector_steps Newton
    iterations on the KKT system at the frozen weights b(theta_{j+1}).

    A corrector that stops on its step limit is normal; a singular system,
    a failed line search or a domain exit aborts with the node index.
    """
    cfg = cfg or PCMConfig()
    grid = cfg.grid(tau)
    started = time.perf_counter()
    psi = psi_from_endpoints(problem.p0, problem.ptau)
    c = init_c(grid, psi)
    weights = reconstruct_b(c, problem.p0)
    L, dt = grid.L, grid.delta_theta
    points = np.empty((L + 1, problem.M, problem.N))
    velocities = np.empty((L, problem.M, problem.N))
    corrector_iterations = 0
    logger.info("PCM on %s: %d nodes, %d corrector steps", problem.identity, L, cfg.corrector_steps)

    with cost_counters() as counter:
        points[0] = problem.initial_solution().blocks
        for j in range(L):
            try:
                predicted, velocities[j], _ = euler_step(problem, points[j], weights[j], c.values[j], dt)
                problem.check_domain(predicted)
                if cfg.corrector_steps > 0:
                    outcome = newton_solve(problem, predicted, weights[j + 1],
                                           max_steps=cfg.corrector_steps, tol=cfg.corrector_tol)
                    if outcome.error is not None and outcome.reason != "max_steps":
                        raise outcome.error
                    corrector_iterations += outcome.steps
                    predicted = outcome.x.blocks
            except OptvoError as err:
                raise err.add_context(node=j + 1, solver=SolverKind.PCM.value)
            points[j + 1] = predicted

        traj = Trajectory(
            grid=grid,
            points=points,
            velocities=velocities,
            m_hat=velocities.reshape(L, -1).mean(axis=0),
            weights=weights,
            problem_id=problem.identity,
            path=c,
            stats=counter.snapshot(),
        )
        od = od_against(traj, reference) if reference is not None else None
        record = _record(problem, points[-1], counter, started, record_timings, od)
        record.ohat_d = ohat_metric(traj)
        record.ohat_raw = ohat_metric(traj, scaled=False)

    logger.info("PCM finished: objective=%.6e violation=%.3e (%d linear solves)",
                record.optimal_value, record.constraint_violation, counter.linear_solves)
    return RunReport(
        solver=SolverKind.PCM.value,
        problem=problem.identity,
        status=RunStatus.COMPLETED,
        records=[record],
        terminal_point=points[-1].tolist(),
        linear_solves=counter.linear_solves,
        factorizations=counter.factorizations,
        solves=counter.solves,
        metadata={
            "tau": grid.tau,
            "delta_theta": dt,
            "corrector_steps": cfg.corrector_steps,
            "corrector_iterations": corrector_iterations,
        },
        trajectory=traj,
        history=[traj],
    )


# ==================== Naive Newton ====================

def run_naive_newton(
    problem: ProblemDefinition,
    max_steps: int = 50,
    tol: float = 1e-10,
    reference: Optional[Trajectory] = None,
    record_timings: bool = True,
) -> RunReport:
    """Damped Newton on the target problem straight from the initial solution"""
    if reference is not None and reference.problem_id != problem.identity:
        raise ProblemMismatchError(
            "reference belongs to a different problem",
            problem=problem.identity,
            reference=reference.problem_id,
        )
    started = time.perf_counter()
    x0 = problem.initial_solution()
    with cost_counters() as counter:
        outcome = newton_solve(problem, x0, problem.ptau, max_steps=max_steps, tol=tol)
    status = RunStatus.CONVERGED if outcome.converged else RunStatus.FAILED
    if outcome.converged:
        logger.info("Naive Newton converged in %d steps", outcome.steps)
    else:
        logger.warning("Naive Newton failed after %d steps: %s", outcome.steps, outcome.reason)

    od = None
    if reference is not None:
        od = float(np.linalg.norm(outcome.x.flat - reference.terminal.flat))
    record = _record(problem, outcome.x, counter, started, record_timings, od)
    metadata = {
        "converged": outcome.converged,
        "steps": outcome.steps,
        "reason": outcome.reason,
        "merit_history": outcome.history,
    }
    if outcome.error is not None:
        metadata["error"] = outcome.error.to_dict()
    return RunReport(
        solver=SolverKind.NAIVE_NEWTON.value,
        problem=problem.identity,
        status=status,
        records=[record],
        terminal_point=outcome.x.blocks.tolist(),
        linear_solves=counter.linear_solves,
        factorizations=counter.factorizations,
        solves=counter.solves,
        metadata=metadata,
    )
