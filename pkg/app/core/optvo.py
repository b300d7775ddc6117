"""
OP-TVO Driver
Alternates the prediction sweep with parametral tuning until the
optimality-distance estimate falls below its threshold.
"""

import logging
import time
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .exceptions import OptvoError
from .kkt import check_assumptions, constraint_violation, newton_solve
from .linalg import cost_counters
from .models import IterationRecord, RunReport, RunStatus, SolverConfig, SolverKind, Trajectory
from .path_engine import (
    curvature,
    euler_error_bound,
    euler_predict,
    od_against,
    ohat_metric,
    velocity_deviation_bound,
)
from .problems import ProblemDefinition
from .tuner import init_c, psi_from_endpoints, tune

logger = logging.getLogger(__name__)


def objective_and_violation(problem: ProblemDefinition, x_tau: Any) -> Tuple[float, float]:
    """Objective with the target weights and the L1 constraint violation"""
    return problem.eval_objective(x_tau, problem.ptau), constraint_violation(problem, x_tau)


def _worst(current: Dict[str, float], report) -> Dict[str, float]:
    values = {
        "rcond_J": report.rcond_J,
        "rcond_G": report.rcond_G,
        "rcond_diag_v": report.rcond_diag_v,
        "rcond_sum_D": report.rcond_sum_D,
        "rcond_lagrangian_hessian": report.rcond_lagrangian_hessian,
    }
    return {k: min(v, current.get(k, np.inf)) for k, v in values.items()}


def run_optvo(
    problem: ProblemDefinition,
    config: Optional[SolverConfig] = None,
    reference: Optional[Trajectory] = None,
    record_timings: bool = True,
) -> RunReport:
    """
    Run prediction and parametral tuning until the scaled O_hat_d drops below o_th.

    Iteration 1 only predicts under constant log-rates; every later iteration
    predicts under the path tuned from the previous prediction. A rise of
    O_hat_d stops the run as stalled and keeps the best iteration.

    Args:
        problem: Problem instance
        config: Solver hyper-parameters
        reference: Benchmark trajectory for the O_d column
        record_timings: Write 0.0 instead of wall times when False

    Returns:
        RunReport with one record per iteration
    """
    config = config or SolverConfig()
    grid = config.grid()
    psi = psi_from_endpoints(problem.p0, problem.ptau)
    c = init_c(grid, psi, decay=config.init_decay)

    records: List[IterationRecord] = []
    history: List[Trajectory] = []
    worst: Dict[str, float] = {}
    status = RunStatus.MAX_ITER
    best: Optional[Tuple[float, int]] = None
    previous: Optional[float] = None
    final_index = 0
    started = time.perf_counter()
    logger.info("OP-TVO on %s: tau=%g delta_theta=%g mu=%g o_th=%g init_decay=%g",
                problem.identity, grid.tau, grid.delta_theta, config.mu, config.o_th, config.init_decay)

    with cost_counters() as counter:
        for k in range(1, config.max_iter + 1):
            try:
                traj = euler_predict(problem, grid, c, keep_gammas=True)
            except OptvoError as err:
                raise err.add_context(iteration=k, solver=SolverKind.OPTVO.value)
            history.append(traj)

            ohat = ohat_metric(traj) if k >= 2 else None
            ohat_raw = ohat_metric(traj, scaled=False) if k >= 2 else None
            value, violation = objective_and_violation(problem, traj.points[-1])
            diagnostics = check_assumptions(problem, traj.points[-1])
            worst = _worst(worst, diagnostics)
            logger.debug("Iteration %d assumption diagnostics: %s", k, diagnostics)

            record = IterationRecord(
                iteration=k,
                optimal_value=value,
                constraint_violation=violation,
                elapsed_time_s=time.perf_counter() - started if record_timings else 0.0,
                linear_solves=counter.linear_solves,
                od=od_against(traj, reference) if reference is not None else None,
                ohat_d=ohat,
                ohat_raw=ohat_raw,
                curvature=curvature(traj),
                euler_error_bound=euler_error_bound(traj),
                velocity_deviation_bound=velocity_deviation_bound(traj),
            )
            records.append(record)
            logger.info(
                "OP-TVO iteration %d: objective=%.6e violation=%.3e ohat_d=%s ohat_raw=%s od=%s",
                k, value, violation,
                "n/a" if ohat is None else f"{ohat:.3e}",
                "n/a" if ohat_raw is None else f"{ohat_raw:.3e}",
                "n/a" if record.od is None else f"{record.od:.3e}",
            )

            final_index = k - 1
            if ohat is not None:
                if best is None or ohat < best[0]:
                    best = (ohat, k - 1)
                if ohat < config.o_th:
                    status = RunStatus.CONVERGED
                    break
                if previous is not None and ohat > previous:
                    status = RunStatus.STALLED
                    final_index = best[1]
                    logger.warning("OP-TVO stalled at iteration %d; keeping iteration %d", k, best[1] + 1)
                    break
                previous = ohat

            if k < config.max_iter:
                c = tune(traj.gammas, traj.m_hat, psi, config.mu, grid)
            traj.gammas = None

        if status is RunStatus.MAX_ITER:
            logger.warning("OP-TVO reached max_iter=%d without O_hat_d < %g", config.max_iter, config.o_th)

        for traj in history:
            traj.gammas = None
        final = history[final_index]
        metadata: Dict[str, Any] = {
            "tau": grid.tau,
            "delta_theta": grid.delta_theta,
            "mu": config.mu,
            "o_th": config.o_th,
        "init_decay": config.init_decay,
            "iterations": len(records),
            "final_iteration": final_index + 1,
            "worst_rcond": worst,
            "problem_parameters": problem.parameters(),
        }
        if config.polish:
            polish = newton_solve(problem, final.points[-1], problem.ptau,
                                  max_steps=config.polish_max_steps, tol=config.polish_tol)
            metadata["polish"] = {"converged": polish.converged, "steps": polish.steps, "reason": polish.reason}
            if polish.converged:
                final.polished = polish.x.blocks
                polished_value, polished_violation = objective_and_violation(problem, polish.x)
                metadata["polish"].update(optimal_value=polished_value, constraint_violation=polished_violation)
            else:
                logger.warning("OP-TVO terminal polish failed: %s", polish.reason)
        final.stats = counter.snapshot()

    logger.info("OP-TVO finished with status %s after %d iterations (%d linear solves)",
                status.value, len(records), counter.linear_solves)
    return RunReport(
        solver=SolverKind.OPTVO.value,
        problem=problem.identity,
        status=status,
        records=records,
        terminal_point=final.terminal.blocks.tolist(),
        linear_solves=counter.linear_solves,
        factorizations=counter.factorizations,
        solves=counter.solves,
        metadata=metadata,
        trajectory=final,
        history=history,
    )
