import numpy as np
import pytest

from app.core.baselines import benchmark_report, run_benchmark, run_naive_newton, run_pcm
from app.core.exceptions import ProblemMismatchError
from app.core.kkt import kkt_residual
from app.core.linalg import cost_counters, solve_small
from app.core.models import BenchmarkConfig, E1Params, PCMConfig, RunStatus
from app.core.problems import E1Problem

from .test_kkt import LinearProblem


def _relative_error(report_or_point, problem):
    exact = problem.solve_exact(problem.ptau).flat
    return np.linalg.norm(np.ravel(report_or_point) - exact) / np.linalg.norm(exact)


# ==================== Benchmark ====================

def test_identity_benchmark_stays_put(identity_homotopy):
    traj = run_benchmark(identity_homotopy, BenchmarkConfig(delta_theta=1e-2))
    x0 = identity_homotopy.initial_solution().blocks
    np.testing.assert_array_equal(traj.points[-1], x0)
    np.testing.assert_array_equal(traj.terminal.blocks, x0)


@pytest.mark.slow
def test_quadratic_benchmark_accuracy(quadratic_1d):
    traj = run_benchmark(quadratic_1d, BenchmarkConfig())
    assert _relative_error(traj.points[-1], quadratic_1d) <= 1e-4
    assert _relative_error(traj.terminal.blocks, quadratic_1d) <= 1e-10


def test_benchmark_converges_at_first_order(quadratic_1d):
    ends = [
        run_benchmark(quadratic_1d, BenchmarkConfig(delta_theta=step, polish=False)).points[-1]
        for step in (2e-3, 1e-3, 5e-4)
    ]
    ratio = np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2])
    assert 1.6 <= ratio <= 2.4


def test_benchmark_sweep_cost():
    problem = E1Problem(E1Params(M=3))
    traj = run_benchmark(problem, BenchmarkConfig(delta_theta=1e-2, polish=False))
    assert traj.stats["factorizations"] == 300 * (2 * 3 + 1)
    assert traj.stats["solves"] == 300 * (4 * 3 + 1)
    assert traj.stats["sweep"]["linear_solves"] == traj.stats["linear_solves"]


def test_benchmark_report_has_zero_distance(quadratic_1d):
    traj = run_benchmark(quadratic_1d, BenchmarkConfig(delta_theta=1e-2))
    report = benchmark_report(quadratic_1d, traj)
    assert report.status is RunStatus.COMPLETED
    assert report.final.od == 0.0
    assert report.terminal_point == traj.terminal.blocks.tolist()
    assert report.linear_solves == traj.stats["linear_solves"]


@pytest.mark.slow
def test_polished_erfc_benchmark_is_a_kkt_point(e1_small):
    traj = run_benchmark(e1_small, BenchmarkConfig(delta_theta=1e-3))
    stationarity, feasibility = kkt_residual(e1_small, traj.terminal, e1_small.ptau)
    assert stationarity <= 1e-10
    assert feasibility <= 1e-10


# ==================== Prediction-correction ====================

def test_pcm_without_corrector_is_the_euler_sweep(quadratic_1d):
    traj = run_benchmark(quadratic_1d, BenchmarkConfig(delta_theta=1e-3, polish=False))
    report = run_pcm(quadratic_1d, PCMConfig(delta_theta=1e-3, corrector_steps=0))
    np.testing.assert_array_equal(report.trajectory.points, traj.points)
    assert report.factorizations == traj.stats["factorizations"]
    assert report.solves == traj.stats["solves"]
    assert report.metadata["corrector_iterations"] == 0


def test_pcm_corrector_lands_on_quadratic_optimum(quadratic_1d):
    reference = run_benchmark(quadratic_1d, BenchmarkConfig(delta_theta=1e-3))
    report = run_pcm(quadratic_1d, PCMConfig(delta_theta=1e-3), reference=reference)
    assert report.status is RunStatus.COMPLETED
    assert _relative_error(report.terminal_point, quadratic_1d) <= 1e-8
    assert report.final.od <= 1e-8
    assert report.final.ohat_d is not None


@pytest.mark.slow
def test_more_corrector_steps_get_closer(e1_small):
    reference = run_benchmark(e1_small, BenchmarkConfig(delta_theta=1e-3))
    distances = [
        run_pcm(e1_small, PCMConfig(delta_theta=1e-3, corrector_steps=steps), reference=reference).final.od
        for steps in (0, 1, 2)
    ]
    assert distances[1] < distances[0]
    assert distances[2] <= distances[1] + 1e-8


def test_terminal_violation_matches_kkt_residual(quadratic_1d):
    report = run_pcm(quadratic_1d, PCMConfig(delta_theta=1e-2))
    feasibility = kkt_residual(quadratic_1d, report.terminal_point, quadratic_1d.ptau).feasibility
    assert report.final.constraint_violation == pytest.approx(feasibility, abs=1e-12)


# ==================== Naive Newton ====================

def test_naive_newton_solves_quadratic(quadratic_1d):
    report = run_naive_newton(quadratic_1d)
    assert report.status is RunStatus.CONVERGED
    assert report.metadata["steps"] <= 3
    assert _relative_error(report.terminal_point, quadratic_1d) <= 1e-8


def test_naive_newton_needs_no_step_without_homotopy(identity_homotopy):
    report = run_naive_newton(identity_homotopy)
    assert report.status is RunStatus.CONVERGED
    assert report.metadata["steps"] == 0
    assert report.records[0].iteration == 1


def test_naive_newton_reports_rank_deficient_constraints():
    report = run_naive_newton(LinearProblem([0.0, 0.0]))
    assert report.status is RunStatus.FAILED
    assert report.metadata["reason"] == "singular"
    assert report.metadata["error"]["error"] == "AssumptionViolation"
    assert report.records[0].iteration == 1


def test_naive_newton_refuses_foreign_reference(quadratic_1d, identity_homotopy):
    reference = run_benchmark(quadratic_1d, BenchmarkConfig(delta_theta=1e-2, polish=False))
    with pytest.raises(ProblemMismatchError):
        run_naive_newton(identity_homotopy, reference=reference)


# ==================== Cost counters ====================

def test_nested_counters_feed_their_parent():
    A = np.array([[2.0, 0.0], [0.0, 3.0]])
    with cost_counters() as outer:
        solve_small(A, np.ones(2), "outer")
        with cost_counters() as inner:
            solve_small(A, np.ones(2), "inner")
    assert (inner.factorizations, inner.solves) == (1, 1)
    assert (outer.factorizations, outer.solves) == (2, 2)
    assert outer.by_kind == {"inner": 2, "outer": 2}
    assert outer.linear_solves == 4
