"""
Derivative Diagnostics
Fourth-order central finite differences and analytic-versus-numeric checks
for every evaluator of a problem.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .models import BlockPoint
from .problems import E1Problem, ProblemDefinition

logger = logging.getLogger(__name__)

FD_STEP = 1e-5


def fd_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """
    Five-point central-difference Jacobian of a vector (or scalar) function.

    Returns:
        Array of shape fun(x).shape + x.shape
    """
    x = np.asarray(x, dtype=float)
    base = np.asarray(fun(x), dtype=float)
    jac = np.zeros(base.shape + x.shape)
    for i in np.ndindex(x.shape):
        step = np.zeros_like(x)
        step[i] = h
        diff = (-np.asarray(fun(x + 2 * step)) + 8 * np.asarray(fun(x + step))
                - 8 * np.asarray(fun(x - step)) + np.asarray(fun(x - 2 * step))) / (12 * h)
        jac[(Ellipsis,) + i] = diff
    return jac


def fd_gradient(fun: Callable[[np.ndarray], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    return fd_jacobian(fun, x, h)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-300) -> float:
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)


@dataclass
class DerivativeCheck:
    """Worst relative errors over the checked points"""
    gradient: float = 0.0
    hessian: float = 0.0
    jacobian: float = 0.0
    constraint_hessian: float = 0.0
    points: int = 0
    failures: List[str] = field(default_factory=list)

    def passed(self, grad_tol: float = 1e-5, hess_tol: float = 1e-4) -> bool:
        return (
            self.gradient <= grad_tol
            and self.jacobian <= grad_tol
            and self.hessian <= hess_tol
            and self.constraint_hessian <= hess_tol
        )


def sample_points(problem: ProblemDefinition, count: int, rng: np.random.Generator,
                  spread: float = 0.2) -> List[BlockPoint]:
    """Seeded in-domain points around the initial solution"""
    x0 = problem.initial_solution().blocks
    points = []
    for _ in range(count):
        if isinstance(problem, E1Problem):
            factors = 1.0 + spread * rng.uniform(-1.0, 1.0, size=x0.shape)
            points.append(BlockPoint(x0 * factors))
        else:
            points.append(BlockPoint(x0 + spread * rng.normal(size=x0.shape)))
    return points


def check_derivatives(
    problem: ProblemDefinition,
    points: List[BlockPoint],
    agents: Optional[List[int]] = None,
    h: float = FD_STEP,
) -> DerivativeCheck:
    """
    Compare analytic derivatives of f and h against finite differences.

    Gradients are differenced from f and h; Hessians from the analytic gradients.
    """
    report = DerivativeCheck()
    agents = list(range(problem.M)) if agents is None else agents
    for point in points:
        for m in agents:
            rows = np.array([m])
            x_m = point.blocks[m]
            d = problem.derivatives(x_m, m)

            def f(y):
                return problem.objective_terms(y[None], rows)[0]

            def grad(y):
                return problem.gradients(y[None], rows)[0]

            def h_m(y):
                return problem.constraints(y[None], rows)[0]

            def jac_t(y):
                return problem.jacobians_t(y[None], rows)[0]

            errors = {
                "gradient": relative_error(d.grad, fd_gradient(f, x_m, h)),
                "hessian": relative_error(d.hess, fd_jacobian(grad, x_m, h)),
                # fd_jacobian(h_m)[n, i] = d h_n / d x_i, the transpose of J_m
                "jacobian": relative_error(d.Jm, fd_jacobian(h_m, x_m, h).T),
                # d J[i, n] / d x_j -> hessH[n, i, j]
                "constraint_hessian": relative_error(
                    d.hessH, np.transpose(fd_jacobian(jac_t, x_m, h), (1, 0, 2))
                ),
            }
            for name, value in errors.items():
                if value > getattr(report, name):
                    setattr(report, name, value)
        report.points += 1
    if report.gradient > 1e-5 or report.jacobian > 1e-5:
        report.failures.append("first derivatives")
    if report.hessian > 1e-4 or report.constraint_hessian > 1e-4:
        report.failures.append("second derivatives")
    logger.debug("Derivative check on %s: %s", problem.identity, report)
    return report
