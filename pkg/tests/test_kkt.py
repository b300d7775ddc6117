import numpy as np
import pytest

from app.core.exceptions import AssumptionViolation
from app.core.kkt import (
    agent_locals,
    agent_multipliers,
    assemble_gamma,
    check_assumptions,
    compute_multiplier,
    gamma_from_locals,
    gamma_invariants,
    kkt_residual,
    multiplier_consistency,
    newton_correct,
    newton_solve,
    phi_eval,
)
from app.core.diagnostics import sample_points
from app.core.linalg import cost_counters
from app.core.models import BlockPoint, E1Params, QuadraticParams
from app.core.problems import E1Problem, ProblemDefinition, QuadraticProblem


class LinearProblem(ProblemDefinition):
    """f_m(x) = sum(x), h_m(x) = scale_m * x"""

    name = "linear"

    def __init__(self, scales, N=1):
        self.scales = np.asarray(scales, dtype=float)
        M = len(self.scales)
        super().__init__(M=M, N=N, u=np.zeros(N), p0=np.ones(M), ptau=np.ones(M))

    def _rows(self, X, agents):
        return self.scales[self._agents(np.atleast_2d(X), agents)]

    def objective_terms(self, X, agents=None):
        return np.atleast_2d(X).sum(axis=1)

    def gradients(self, X, agents=None):
        return np.ones_like(np.atleast_2d(X))

    def hessians(self, X, agents=None):
        X = np.atleast_2d(X)
        return np.zeros((X.shape[0], self.N, self.N))

    def constraints(self, X, agents=None):
        return self._rows(X, agents)[:, None] * np.atleast_2d(X)

    def jacobians_t(self, X, agents=None):
        return self._rows(X, agents)[:, None, None] * np.eye(self.N)

    def constraint_hessians(self, X, agents=None):
        X = np.atleast_2d(X)
        return np.zeros((X.shape[0], self.N, self.N, self.N))

    def check_domain(self, X, agents=None):
        pass

    def initial_solution(self):
        return BlockPoint(np.zeros((self.M, self.N)))

    def parameters(self):
        return {"scales": self.scales.tolist()}


def _quadratic(M, N, seed, spread=0.5):
    return QuadraticProblem(QuadraticParams.generate(M=M, N=N, seed=seed, spread=spread))


def _dense_kkt(problem, b):
    """Joint solve of 2 b_m (x_m - q_m) + A_m^T lambda = 0, sum_m A_m x_m = u"""
    M, N = problem.M, problem.N
    size = M * N + N
    K = np.zeros((size, size))
    rhs = np.zeros(size)
    for m in range(M):
        rows = slice(m * N, (m + 1) * N)
        K[rows, rows] = 2.0 * b[m] * np.eye(N)
        K[rows, M * N:] = problem.A[m].T
        K[M * N:, rows] = problem.A[m]
        rhs[rows] = 2.0 * b[m] * problem.q[m]
    rhs[M * N:] = problem.u
    sol = np.linalg.solve(K, rhs)
    return sol[: M * N].reshape(M, N), sol[M * N:]


def _velocity_oracle(problem, X, b, c):
    """x'_m = -H_m^{-1} J_m (lambda' - c_m lambda) with (sum J^T H^{-1} J) lambda' = sum c_m J^T H^{-1} J lambda"""
    lam = agent_multipliers(problem, X, b)[0]
    J = problem.jacobians_t(X)
    H = b[:, None, None] * problem.hessians(X) + np.einsum("n,knij->kij", lam, problem.constraint_hessians(X))
    HinvJ = np.linalg.solve(H, J)
    blocks = np.einsum("kin,kip->knp", J, HinvJ)
    lam_dot = np.linalg.solve(blocks.sum(axis=0), np.einsum("k,knp,p->n", c, blocks, lam))
    return -np.einsum("kin,kn->ki", HinvJ, lam_dot[None, :] - c[:, None] * lam[None, :])


# ==================== Multipliers ====================

def test_multiplier_of_scalar_linear_problem():
    problem = LinearProblem([1.0])
    lam = compute_multiplier(problem, [[0.5]], [1.0], 0)
    assert lam.shape == (1,)
    assert lam[0] == pytest.approx(-1.0)


def test_zero_gradient_gives_zero_multiplier(quadratic):
    lam = compute_multiplier(quadratic, quadratic.q, quadratic.p0, 1)
    assert np.all(lam == 0.0)


@pytest.mark.parametrize("M,N,seed", [(2, 1, 0), (3, 2, 1), (4, 3, 2)])
def test_multipliers_match_dense_kkt_solve(M, N, seed):
    problem = _quadratic(M, N, seed)
    b = np.random.default_rng(seed).uniform(0.2, 2.0, size=M)
    X, lam = _dense_kkt(problem, b)
    np.testing.assert_allclose(problem.solve_exact(b).blocks, X, rtol=1e-10, atol=1e-12)
    for m in range(M):
        np.testing.assert_allclose(compute_multiplier(problem, X, b, m), lam, rtol=1e-8, atol=1e-12)


@pytest.mark.parametrize("problem", [
    E1Problem(E1Params(M=5)),
    E1Problem(E1Params(M=20)),
    _quadratic(3, 2, 3),
], ids=["e1-5", "e1-20", "quadratic"])
def test_multipliers_agree_at_initial_solution(problem):
    assert multiplier_consistency(problem, problem.initial_solution(), problem.p0) <= 1e-8


def test_multipliers_disagree_away_from_kkt_points(quadratic):
    X = quadratic.q + np.random.default_rng(3).normal(size=quadratic.q.shape)
    assert multiplier_consistency(quadratic, X, quadratic.p0) > 1e-3


# ==================== Gamma ====================

def test_single_agent_gamma_is_zero():
    problem = _quadratic(1, 2, 0)
    gamma = assemble_gamma(problem, problem.initial_solution(), problem.p0)
    assert gamma.matrix.shape == (2, 1)
    assert not gamma.matrix.any()


@pytest.mark.parametrize("problem", [
    E1Problem(E1Params(M=2)),
    E1Problem(E1Params(M=5)),
    E1Problem(E1Params(M=10)),
    _quadratic(2, 1, 5),
    _quadratic(3, 2, 6),
], ids=["e1-2", "e1-5", "e1-10", "quadratic-2x1", "quadratic-3x2"])
def test_gamma_nullspaces_on_random_states(problem):
    rng = np.random.default_rng(21)
    for point in sample_points(problem, 5, rng, spread=0.05):
        locals_ = agent_locals(problem, point)
        values = gamma_invariants(gamma_from_locals(locals_), locals_.J)
        assert values["uniform_shift"] <= 1e-8
        assert values["column_null"] <= 1e-8


def test_gamma_shape_and_uniform_shift(quadratic):
    x0 = quadratic.initial_solution()
    gamma = assemble_gamma(quadratic, x0, quadratic.p0)
    assert gamma.matrix.shape == (quadratic.N * quadratic.M, quadratic.M)
    assert np.abs(phi_eval(quadratic, x0, quadratic.p0, np.zeros(3)).blocks).max() == 0.0
    shifted = phi_eval(quadratic, x0, quadratic.p0, np.full(3, 2.5)).blocks
    assert np.abs(shifted).max() <= 1e-8 * np.linalg.norm(gamma.matrix)


@pytest.mark.parametrize("M,N", [(2, 1), (3, 2)])
def test_gamma_matches_finite_differences_of_exact_path(M, N):
    problem = _quadratic(M, N, 11)
    c = np.linspace(-0.7, 0.4, M)
    theta, d = 0.4, 1e-5

    def x_star(t):
        return problem.solve_exact(problem.p0 * np.exp(c * t)).blocks

    fd = (x_star(theta + d) - x_star(theta - d)) / (2 * d)
    b = problem.p0 * np.exp(c * theta)
    velocity = phi_eval(problem, x_star(theta), b, c).blocks
    assert np.linalg.norm(velocity - fd) <= 1e-4 * np.linalg.norm(fd)


def _kkt_states():
    states = []
    rng = np.random.default_rng(17)
    for M, N, seed in [(2, 1, 0), (2, 2, 1), (3, 1, 2), (3, 2, 3)]:
        problem = _quadratic(M, N, seed)
        b = rng.uniform(0.2, 2.0, size=M)
        states.append((problem, problem.solve_exact(b).blocks, b))
    for M in (2, 3):
        problem = E1Problem(E1Params(M=M))
        states.append((problem, problem.initial_solution().blocks, problem.p0))
        b = problem.p0 * np.exp(0.1 * rng.uniform(-1.0, 1.0, size=M))
        states.append((problem, newton_correct(problem, problem.initial_solution(), b).blocks, b))
    return states


@pytest.mark.parametrize("index", range(8))
def test_gamma_velocity_matches_implicit_function_form(index):
    problem, X, b = _kkt_states()[index]
    c = np.random.default_rng(index).normal(size=problem.M)
    oracle = _velocity_oracle(problem, X, b, c)
    velocity = phi_eval(problem, X, b, c).blocks
    assert np.linalg.norm(velocity - oracle) <= 1e-8 * np.linalg.norm(oracle)


def test_velocity_ignores_common_weight_scale():
    problem = E1Problem(E1Params(M=4))
    x0 = problem.initial_solution()
    c = np.array([0.3, -0.1, 0.8, -0.5])
    base = phi_eval(problem, x0, problem.p0, c).blocks
    scaled = phi_eval(problem, x0, 3.7 * problem.p0, c).blocks
    np.testing.assert_allclose(scaled, base, rtol=1e-12, atol=0.0)


@pytest.mark.parametrize("problem", [E1Problem(E1Params(M=4)), _quadratic(3, 2, 9)], ids=["e1", "quadratic"])
def test_lagrangian_hessian_decomposition(problem):
    point = sample_points(problem, 1, np.random.default_rng(2), spread=0.05)[0]
    b = problem.p0 * np.linspace(0.5, 1.5, problem.M)
    locals_ = agent_locals(problem, point)
    lam = agent_multipliers(problem, point, b)
    X = point.blocks
    right = b[:, None, None] * problem.hessians(X) + np.einsum(
        "kn,knij->kij", lam, problem.constraint_hessians(X)
    )
    left = np.einsum("kin,kn,knj->kij", locals_.J, lam, locals_.G)
    for m in range(problem.M):
        assert np.linalg.norm(left[m] - right[m]) <= 1e-8 * np.linalg.norm(right[m])


def test_gamma_assembly_cost():
    problem = E1Problem(E1Params(M=6))
    with cost_counters() as counter:
        assemble_gamma(problem, problem.initial_solution(), problem.p0)
    assert counter.factorizations == 2 * 6 + 1
    assert counter.solves == 4 * 6 + 1


# ==================== Assumption violations ====================

def test_singular_constraint_jacobian_names_assumption_ii():
    problem = LinearProblem([1.0, 0.0, 2.0], N=2)
    with pytest.raises(AssumptionViolation) as info:
        assemble_gamma(problem, np.ones((3, 2)), problem.p0)
    assert info.value.assumption == "II"
    assert info.value.context["agents"] == [1]


def test_vanishing_gradient_names_diag_v(quadratic):
    X = quadratic.q + 0.3
    X[1] = quadratic.q[1]
    with pytest.raises(AssumptionViolation) as info:
        assemble_gamma(quadratic, X, quadratic.p0)
    assert info.value.assumption == "III"
    assert info.value.quantity == "diag(v_m)"
    assert info.value.context["agents"] == [1]


def test_explicit_lconst_equal_to_m_underflows_erfc():
    problem = E1Problem(E1Params(M=10, Lconst=10.0))
    x0 = problem.initial_solution()
    report = check_assumptions(problem, x0)
    assert report.assumption_ii
    assert not report.assumption_iii
    with pytest.raises(AssumptionViolation) as info:
        assemble_gamma(problem, x0, problem.p0)
    assert info.value.assumption == "III"


def test_assumptions_hold_at_derived_start():
    problem = E1Problem(E1Params(M=10))
    report = check_assumptions(problem, problem.initial_solution())
    assert report.ok
    assert report.rcond_J > 1e-12


# ==================== Residuals and Newton ====================

@pytest.mark.parametrize("problem", [E1Problem(E1Params(M=5)), _quadratic(3, 2, 3)], ids=["e1", "quadratic"])
def test_residual_vanishes_at_initial_solution(problem):
    stationarity, feasibility = kkt_residual(problem, problem.initial_solution(), problem.p0)
    assert stationarity <= 1e-8
    assert feasibility <= 1e-8


def test_residual_grows_with_perturbation(quadratic):
    x0 = quadratic.initial_solution().blocks
    direction = np.random.default_rng(8).normal(size=x0.shape)
    totals = []
    for delta in (1e-4, 1e-3, 1e-2):
        stationarity, feasibility = kkt_residual(quadratic, x0 + delta * direction, quadratic.p0)
        assert 0.0 < stationarity < 1.0
        assert 0.0 < feasibility < 1.0
        totals.append(stationarity + feasibility)
    assert totals[0] < totals[1] < totals[2]


def test_newton_leaves_kkt_point_unchanged(quadratic):
    x0 = quadratic.initial_solution()
    outcome = newton_solve(quadratic, x0, quadratic.p0)
    assert outcome.converged
    assert outcome.steps == 0
    np.testing.assert_array_equal(outcome.x.blocks, x0.blocks)


def test_newton_solves_quadratic_from_random_start(quadratic):
    start = np.random.default_rng(4).normal(size=(quadratic.M, quadratic.N))
    outcome = newton_solve(quadratic, start, quadratic.ptau)
    assert outcome.converged
    assert outcome.steps <= 3
    exact = quadratic.solve_exact(quadratic.ptau).blocks
    assert np.linalg.norm(outcome.x.blocks - exact) <= 1e-8 * np.linalg.norm(exact)
    assert all(later < earlier for earlier, later in zip(outcome.history, outcome.history[1:]))


def test_newton_singular_system_is_returned_not_raised():
    problem = LinearProblem([1.0, 2.0])
    outcome = newton_solve(problem, np.ones((2, 1)), problem.p0)
    assert not outcome.converged
    assert outcome.reason == "singular"
    assert isinstance(outcome.error, AssumptionViolation)
    with pytest.raises(AssumptionViolation):
        newton_correct(problem, np.ones((2, 1)), problem.p0)


def test_newton_without_start_multiplier_reports_singular_constraints():
    problem = LinearProblem([0.0, 0.0])
    outcome = newton_solve(problem, np.ones((2, 1)), problem.p0)
    assert not outcome.converged
    assert outcome.reason == "singular"
    assert outcome.steps == 0
    assert isinstance(outcome.error, AssumptionViolation)
    assert outcome.error.context["steps"] == 0
    np.testing.assert_array_equal(outcome.lam, np.zeros(1))
    assert outcome.stationarity == pytest.approx(1.0)
