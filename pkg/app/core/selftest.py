"""
Self-Test Suites
Invariant checks grouped into fast, standard and full suites for the
`selftest` command.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

from .baselines import run_benchmark
from .diagnostics import check_derivatives, sample_points
from .kkt import agent_locals, agent_multipliers, gamma_from_locals, gamma_invariants, kkt_residual
from .models import E1_INIT_DECAY, BenchmarkConfig, E1Params, PsiVector, QuadraticParams, SolverConfig, ThetaGrid
from .optvo import run_optvo
from .path_engine import od_against
from .problems import E1Problem, QuadraticProblem
from .tuner import stationarity_residual, tune

logger = logging.getLogger(__name__)

SUITES = ("fast", "standard", "full")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


# ==================== Fast checks ====================

def _check_derivatives() -> Tuple[bool, str]:
    rng = np.random.default_rng(7)
    worst = []
    for problem in (E1Problem(E1Params(M=3)), QuadraticProblem(QuadraticParams.generate(M=3, N=2, seed=1))):
        report = check_derivatives(problem, sample_points(problem, 7, rng))
        worst.append((problem.name, report.gradient, report.hessian, report.passed()))
    detail = "; ".join(f"{n}: grad {g:.1e}, hess {h:.1e}" for n, g, h, _ in worst)
    return all(p for *_, p in worst), detail


def _check_gamma() -> Tuple[bool, str]:
    rng = np.random.default_rng(11)
    problems = [E1Problem(E1Params(M=m)) for m in (2, 5)]
    problems += [QuadraticProblem(QuadraticParams.generate(M=m, N=2, seed=m)) for m in (2, 3)]
    worst = 0.0
    for problem in problems:
        for point in sample_points(problem, 3, rng, spread=0.05):
            locals_ = agent_locals(problem, point)
            values = gamma_invariants(gamma_from_locals(locals_), locals_.J)
            worst = max(worst, *values.values())
    return worst <= 1e-8, f"worst relative nullspace residual {worst:.1e}"


def _check_decomposition() -> Tuple[bool, str]:
    problem = E1Problem(E1Params(M=4))
    point = sample_points(problem, 1, np.random.default_rng(3), spread=0.05)[0]
    b = problem.p0 * 1.7
    locals_ = agent_locals(problem, point)
    lam = agent_multipliers(problem, point, b)
    X = point.blocks
    worst = 0.0
    for m in range(problem.M):
        left = locals_.J[m] @ np.diag(lam[m]) @ locals_.G[m]
        right = b[m] * problem.hessians(X)[m] + np.einsum("n,nij->ij", lam[m], problem.constraint_hessians(X)[m])
        worst = max(worst, np.linalg.norm(left - right) / np.linalg.norm(right))
    return worst <= 1e-8, f"relative error {worst:.1e}"


def _discrete_qp(stack, m_hat, psi, mu, grid) -> np.ndarray:
    nodes, _, M = stack.shape
    w = grid.trapezoid_weights()
    size = nodes * M
    K = np.zeros((size + M, size + M))
    rhs = np.zeros(size + M)
    for j in range(nodes):
        block = slice(j * M, (j + 1) * M)
        K[block, block] = w[j] * (stack[j].T @ stack[j] + mu * np.eye(M))
        K[block, size:] = w[j] * np.eye(M)
        K[size:, block] = w[j] * np.eye(M)
        rhs[block] = w[j] * stack[j].T @ m_hat
    rhs[size:] = psi
    return np.linalg.solve(K, rhs)[:size].reshape(nodes, M)


def _check_tuner() -> Tuple[bool, str]:
    rng = np.random.default_rng(5)
    grid = ThetaGrid(1.0, 0.25)
    stack = rng.normal(size=(grid.L + 1, 4, 2))
    m_hat = rng.normal(size=4)
    psi = PsiVector(rng.normal(size=2))
    c = tune(stack, m_hat, psi, 1e-3, grid)
    oracle = _discrete_qp(stack, m_hat, psi.psi, 1e-3, grid)
    error = np.abs(c.values - oracle).max()
    stationarity = stationarity_residual(c, stack, m_hat, 1e-3, c.multiplier)
    return error <= 1e-8 and stationarity <= 1e-8, f"QP error {error:.1e}, stationarity {stationarity:.1e}"


def _check_quadratic_end_to_end() -> Tuple[bool, str]:
    problem = QuadraticProblem(QuadraticParams.generate(M=3, N=1, seed=2, spread=0.3))
    report = run_optvo(problem, SolverConfig(o_th=1e-10, max_iter=5))
    exact = problem.solve_exact(problem.ptau).flat
    error = np.linalg.norm(np.ravel(report.terminal_point) - exact) / np.linalg.norm(exact)
    return error <= 1e-4, f"relative terminal error {error:.1e} after {len(report.records)} iterations"


# ==================== Standard and full checks ====================

def _check_e1_polish() -> Tuple[bool, str]:
    problem = E1Problem(E1Params(M=5))
    traj = run_benchmark(problem, BenchmarkConfig(delta_theta=1e-3))
    stationarity, feasibility = kkt_residual(problem, traj.terminal, problem.ptau)
    return max(stationarity, feasibility) <= 1e-10, f"stationarity {stationarity:.1e}, feasibility {feasibility:.1e}"


def _check_e1_convergence(M: int, benchmark_step: float) -> Callable[[], Tuple[bool, str]]:
    def check() -> Tuple[bool, str]:
        problem = E1Problem(E1Params(M=M))
        reference = run_benchmark(problem, BenchmarkConfig(delta_theta=benchmark_step))
        report = run_optvo(problem, SolverConfig(max_iter=5, init_decay=E1_INIT_DECAY), reference=reference)
        first, last = report.records[0].od, od_against(report.trajectory, reference)
        converged = report.status.value == "converged"
        return converged and last * 10 <= first, (
            f"status {report.status.value} after {len(report.records)} iterations, O_d {first:.2e} -> {last:.2e}"
        )
    return check


SUITE_CHECKS: Dict[str, List[Tuple[str, Callable[[], Tuple[bool, str]]]]] = {
    "fast": [
        ("derivatives", _check_derivatives),
        ("gamma nullspaces", _check_gamma),
        ("decomposition identity", _check_decomposition),
        ("tuner QP oracle", _check_tuner),
        ("quadratic end-to-end", _check_quadratic_end_to_end),
    ],
}
SUITE_CHECKS["standard"] = SUITE_CHECKS["fast"] + [
    ("E1 polish", _check_e1_polish),
    ("E1 M=5 convergence", _check_e1_convergence(5, 1e-3)),
]
SUITE_CHECKS["full"] = SUITE_CHECKS["standard"] + [
    ("E1 M=10 convergence", _check_e1_convergence(10, 1e-4)),
]


def run_suite(suite: str = "fast") -> List[CheckResult]:
    """Run every check of a suite; a raising check counts as failed"""
    if suite not in SUITE_CHECKS:
        raise ValueError(f"unknown suite '{suite}' (known: {list(SUITES)})")
    results = []
    for name, check in SUITE_CHECKS[suite]:
        started = time.perf_counter()
        try:
            passed, detail = check()
        except Exception as exc:  # noqa: BLE001 - reported as a failed check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(passed), detail, time.perf_counter() - started))
        logger.info("selftest %-24s %s (%s)", name, "PASS" if passed else "FAIL", detail)
    return results
