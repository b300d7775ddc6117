import math
from fractions import Fraction

import numpy as np
import pytest

from app.core.diagnostics import check_derivatives, sample_points
from app.core.exceptions import ConfigError, DomainError
from app.core.models import BlockPoint, E1Params, QuadraticParams
from app.core.problems import E1Problem, QuadraticProblem, build_problem


def test_quadratic_objective_vanishes_at_targets(quadratic):
    assert quadratic.eval_objective(quadratic.q, quadratic.p0) == 0.0


def test_quadratic_closed_form_derivatives(quadratic, rng):
    x = rng.normal(size=quadratic.N)
    d = quadratic.derivatives(x, 1)
    np.testing.assert_allclose(d.grad, 2.0 * (x - quadratic.q[1]))
    np.testing.assert_allclose(d.hess, 2.0 * np.eye(quadratic.N))
    np.testing.assert_allclose(d.Jm, quadratic.A[1].T)
    assert not d.hessH.any()


def test_e1_jacobian_is_diagonal():
    problem = E1Problem(E1Params(M=4))
    x = np.array([0.3, 0.7])
    d = problem.derivatives(x, 2)
    np.testing.assert_allclose(d.Jm, np.diag([1.0 / 1.3, 1.4]))
    assert d.hessH[0, 0, 0] == pytest.approx(-1.0 / 1.3 ** 2)
    assert d.hessH[1, 1, 1] == 2.0


def test_e1_initial_solution_with_explicit_lconst_is_feasible():
    problem = E1Problem(E1Params(M=100, Lconst=100.0))
    x0 = problem.initial_solution().blocks
    assert x0[:, 0] == pytest.approx(np.full(100, math.e - 1.0), rel=1e-14)
    assert x0[:, 1] == pytest.approx(np.full(100, 0.1), rel=1e-14)
    assert np.abs(problem.constraint_residual(x0)).max() <= 1e-10


@pytest.mark.parametrize("M", [2, 7, 10, 100])
def test_e1_initial_solution_is_feasible_for_any_m(M):
    problem = E1Problem(E1Params(M=M))
    residual = problem.constraint_residual(problem.initial_solution())
    assert np.abs(residual).max() <= 1e-12 * max(1.0, problem.lconst)


def test_e1_derived_lconst_puts_erfc_argument_at_z0():
    params = E1Params(M=10, z0=3.0)
    problem = E1Problem(params)
    x1, x2 = problem.initial_solution().blocks[0]
    z = params.gamma0 * x1 / math.sqrt(2.0 ** (0.1 / x2) - 1.0)
    assert z == pytest.approx(3.0, rel=1e-10)


def test_e1_objective_matches_scalar_evaluation():
    problem = E1Problem(E1Params(M=5))
    X = problem.initial_solution().blocks * np.linspace(0.9, 1.1, 5)[:, None]
    expected = sum(
        0.2 * math.erfc(40.0 * x1 / math.sqrt(2.0 ** (0.1 / x2) - 1.0)) for x1, x2 in X
    )
    assert problem.eval_objective(X, problem.p0) == pytest.approx(expected, rel=1e-9)


def test_e1_target_weights_match_exact_arithmetic():
    problem = E1Problem(E1Params(M=100))
    total = sum(Fraction(1, m ** 3) for m in range(1, 101))
    a1 = float(Fraction(1) / total)
    assert problem.ptau[0] == pytest.approx(a1, rel=1e-14)
    assert problem.ptau.sum() == pytest.approx(1.0, rel=1e-14)
    assert np.all(np.diff(problem.ptau) < 0)


@pytest.mark.parametrize("bad", [[0.1, 0.0], [0.1, -0.2], [-1.0, 0.5], [-1.5, 0.5], [np.nan, 0.5]])
def test_e1_domain_errors(bad):
    problem = E1Problem(E1Params(M=3))
    X = problem.initial_solution().blocks.copy()
    X[1] = bad
    with pytest.raises(DomainError) as info:
        problem.gradients(X)
    assert info.value.context["agents"] == [1]


@pytest.mark.parametrize("problem", [
    E1Problem(E1Params(M=3)),
    E1Problem(E1Params(M=10)),
    QuadraticProblem(QuadraticParams.generate(M=3, N=2, seed=1)),
    QuadraticProblem(QuadraticParams.generate(M=2, N=3, seed=8)),
], ids=["e1-3", "e1-10", "quadratic-3x2", "quadratic-2x3"])
def test_derivatives_match_finite_differences(problem):
    rng = np.random.default_rng(99)
    report = check_derivatives(problem, sample_points(problem, 20 if problem.M <= 3 else 4, rng))
    assert report.passed(), report
    assert report.failures == []


def test_quadratic_initial_solution_is_optimal(quadratic):
    x0 = quadratic.initial_solution()
    assert np.abs(quadratic.constraint_residual(x0)).max() <= 1e-10
    # no feasible direction decreases the objective
    rng = np.random.default_rng(5)
    base = quadratic.eval_objective(x0, quadratic.p0)
    for _ in range(5):
        direction = rng.normal(size=(quadratic.M, quadratic.N))
        # project onto sum_m A_m d_m = 0 by fixing the last block
        correction = np.einsum("mij,mj->i", quadratic.A[:-1], direction[:-1])
        direction[-1] = -np.linalg.solve(quadratic.A[-1], correction)
        moved = BlockPoint(x0.blocks + 1e-3 * direction)
        assert quadratic.eval_objective(moved, quadratic.p0) >= base


def test_singular_quadratic_matrix_is_rejected():
    with pytest.raises(ConfigError) as info:
        QuadraticParams(q=[[0.0, 0.0]], A=[[[1.0, 2.0], [2.0, 4.0]]], u=[0.0, 0.0], p0=[1.0], ptau=[1.0])
    assert info.value.field == "A"


def test_zero_weight_is_rejected():
    params = QuadraticParams.generate(M=3, N=1, seed=0)
    params.p0[1] = 0.0
    with pytest.raises(ConfigError) as info:
        QuadraticProblem(params)
    assert info.value.field == "problem.params.p0"


def test_build_problem_registry():
    assert isinstance(build_problem("e1", {"M": 4}), E1Problem)
    problem = build_problem("quadratic", {"M": 2, "N": 2}, seed=3)
    assert (problem.M, problem.N) == (2, 2)
    assert build_problem("quadratic", {"M": 2, "N": 2}, seed=3).identity == problem.identity
    with pytest.raises(ConfigError):
        build_problem("rosenbrock")
    with pytest.raises(ConfigError):
        build_problem("e1", {"M": 1})


def test_identity_distinguishes_instances():
    first = E1Problem(E1Params(M=4))
    assert first.identity == E1Problem(E1Params(M=4)).identity
    assert first.identity != E1Problem(E1Params(M=4, gamma0=30.0)).identity
    assert first.identity.startswith("e1:M=4:N=2:")
