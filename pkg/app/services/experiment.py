"""
Experiment Runner
Runs the selected solvers for one ExperimentConfig: the benchmark first, so
that its trajectory is the O_d reference of every other solver.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from app.core.baselines import benchmark_report, run_benchmark, run_naive_newton, run_pcm
from app.core.exceptions import OptvoError
from app.core.models import ExperimentConfig, RunReport, SolverKind, Trajectory
from app.core.optvo import run_optvo
from app.core.problems import ProblemDefinition, build_problem

logger = logging.getLogger(__name__)

RUN_ORDER = [SolverKind.BENCHMARK, SolverKind.PCM, SolverKind.NAIVE_NEWTON, SolverKind.OPTVO]


@dataclass
class ExperimentResult:
    problem: ProblemDefinition
    reports: Dict[SolverKind, RunReport] = field(default_factory=dict)
    reference: Optional[Trajectory] = None

    def ordered(self) -> List[RunReport]:
        return [self.reports[k] for k in RUN_ORDER if k in self.reports]


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Build the problem and run every selected solver in table order"""
    problem = build_problem(config.problem_name, config.problem_params, config.seed)
    result = ExperimentResult(problem=problem)
    timings = config.output.record_timings
    tau = config.solver.tau
    logger.info("Experiment on %s with solvers %s", problem.identity, [s.value for s in config.solvers])

    for kind in RUN_ORDER:
        if kind not in config.solvers:
            continue
        try:
            if kind is SolverKind.BENCHMARK:
                result.reference = run_benchmark(problem, config.benchmark, tau=tau, record_timings=timings)
                report = benchmark_report(problem, result.reference)
            elif kind is SolverKind.PCM:
                report = run_pcm(problem, config.pcm, reference=result.reference, tau=tau,
                                 record_timings=timings)
            elif kind is SolverKind.NAIVE_NEWTON:
                report = run_naive_newton(problem, reference=result.reference, record_timings=timings)
            else:
                report = run_optvo(problem, config.solver, reference=result.reference,
                                   record_timings=timings)
        except OptvoError as err:
            raise err.add_context(solver=kind.value)
        result.reports[kind] = report
    return result
