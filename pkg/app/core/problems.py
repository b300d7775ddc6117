"""
Problem Definitions
Block-separable equality-constrained programs
    min sum_m b_m f_m(x_m)  s.t.  sum_m h_m(x_m) = u
with the erfc test problem and a quadratic problem that has a closed-form optimum.
"""

import hashlib
import logging
from abc import ABC, abstractmethod
from typing import Any, Dict, NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import erfc

from .exceptions import ConfigError, DomainError
from .linalg import solve_small
from .models import BlockPoint, E1Params, QuadraticParams

logger = logging.getLogger(__name__)

DOMAIN_EPS = 1e-9
_TWO_OVER_SQRT_PI = 2.0 / np.sqrt(np.pi)


class Derivatives(NamedTuple):
    grad: np.ndarray  # (N,)
    hess: np.ndarray  # (N, N)
    Jm: np.ndarray  # (N, N), column n is the gradient of h_{m,n}
    hessH: np.ndarray  # (N, N, N), hessH[n] is the Hessian of h_{m,n}


def _frozen(values: Any) -> np.ndarray:
    array = np.array(values, dtype=float, copy=True)
    array.flags.writeable = False
    return array


# ==================== Abstract interface ====================

class ProblemDefinition(ABC):
    """
    Abstract problem interface.

    Every evaluator takes an (K, N) stack of agent blocks and the indices of
    the agents those rows belong to (all agents when omitted), so a whole
    BlockPoint is evaluated with one vectorized call.
    """

    name: str = "abstract"

    def __init__(self, M: int, N: int, u: np.ndarray, p0: np.ndarray, ptau: np.ndarray) -> None:
        self.M = int(M)
        self.N = int(N)
        self.u = _frozen(np.reshape(u, self.N))
        self.p0 = _frozen(np.reshape(p0, self.M))
        self.ptau = _frozen(np.reshape(ptau, self.M))
        for label, weights in (("p0", self.p0), ("ptau", self.ptau)):
            zero = np.flatnonzero(~np.isfinite(weights) | (weights == 0))
            if zero.size:
                raise ConfigError(
                    f"{label} must have finite nonzero entries (agents {zero.tolist()})",
                    field=f"problem.params.{label}",
                )
        self._identity: Optional[str] = None

    # ---------- evaluators ----------

    @abstractmethod
    def objective_terms(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> np.ndarray:
        """f_m(x_m) per row, shape (K,)"""

    @abstractmethod
    def gradients(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> np.ndarray:
        """grad f_m(x_m) per row, shape (K, N)"""

    @abstractmethod
    def hessians(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> np.ndarray:
        """Hessian of f_m per row, shape (K, N, N)"""

    @abstractmethod
    def constraints(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> np.ndarray:
        """h_m(x_m) per row, shape (K, N)"""

    @abstractmethod
    def jacobians_t(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> np.ndarray:
        """Transposed constraint Jacobians J_m, J[k, i, n] = d h_{m,n} / d x_{m,i}"""

    @abstractmethod
    def constraint_hessians(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> np.ndarray:
        """Hessians of every constraint component, shape (K, N, N, N) indexed [k, n, i, j]"""

    @abstractmethod
    def check_domain(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> None:
        """Raise DomainError when any row lies outside the evaluators' domain"""

    @abstractmethod
    def initial_solution(self) -> BlockPoint:
        """Known optimum for the initial weights p0"""

    @abstractmethod
    def parameters(self) -> Dict[str, Any]:
        """JSON-ready parameters identifying the instance"""

    # ---------- shared helpers ----------

    def _agents(self, X: np.ndarray, agents: Optional[np.ndarray]) -> np.ndarray:
        if agents is None:
            if X.shape[0] != self.M:
                raise ValueError(f"Expected {self.M} agent blocks, got {X.shape[0]}")
            return np.arange(self.M)
        return np.atleast_1d(np.asarray(agents, dtype=int))

    @staticmethod
    def _blocks(x: Any) -> np.ndarray:
        if isinstance(x, BlockPoint):
            return x.blocks
        return np.atleast_2d(np.asarray(x, dtype=float))

    def eval_objective(self, x: Any, weights: Sequence[float]) -> float:
        """sum_m weights_m * f_m(x_m)"""
        X = self._blocks(x)
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (self.M,):
            raise ValueError(f"weights must have length {self.M}, got shape {weights.shape}")
        if X.shape != (self.M, self.N):
            raise ValueError(f"Expected point of shape {(self.M, self.N)}, got {X.shape}")
        self.check_domain(X)
        return float(np.dot(weights, self.objective_terms(X)))

    def derivatives(self, x_m: np.ndarray, m: int = 0) -> Derivatives:
        """Closed-form first and second derivatives for agent m at x_m"""
        X = np.asarray(x_m, dtype=float).reshape(1, self.N)
        agents = np.array([m])
        self.check_domain(X, agents)
        return Derivatives(
            grad=self.gradients(X, agents)[0],
            hess=self.hessians(X, agents)[0],
            Jm=self.jacobians_t(X, agents)[0],
            hessH=self.constraint_hessians(X, agents)[0],
        )

    def constraint_residual(self, x: Any) -> np.ndarray:
        """sum_m h_m(x_m) - u"""
        X = self._blocks(x)
        self.check_domain(X)
        return self.constraints(X).sum(axis=0) - self.u

    @property
    def identity(self) -> str:
        """Stable fingerprint of the instance; trajectories from different instances never compare"""
        if self._identity is None:
            digest = hashlib.sha1()
            digest.update(self.name.encode())
            for array in (self.u, self.p0, self.ptau, *self._fingerprint_arrays()):
                digest.update(np.ascontiguousarray(array, dtype=float).tobytes())
            self._identity = f"{self.name}:M={self.M}:N={self.N}:{digest.hexdigest()[:12]}"
        return self._identity

    def _fingerprint_arrays(self) -> Sequence[np.ndarray]:
        return ()

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.identity})"


# ==================== Erfc problem ====================

class E1Problem(ProblemDefinition):
    """
    f(x) = erfc(gamma0 * x1 / sqrt(2^(0.1/x2) - 1)),
    h(x) = [log(1 + x1), x2^2], u = [Lconst, 1],
    weights move from uniform 1/M to a_m = m^-s / sum_k k^-s.
    """

    name = "e1"

    def __init__(self, params: Optional[E1Params] = None) -> None:
        self.params = params or E1Params()
        M = self.params.M
        self.gamma0 = float(self.params.gamma0)
        self.lconst = self.params.resolved_lconst()
        self._k = 0.1 * np.log(2.0)
        powers = np.arange(1, M + 1, dtype=float) ** (-self.params.s)
        super().__init__(
            M=M,
            N=2,
            u=np.array([self.lconst, 1.0]),
            p0=np.full(M, 1.0 / M),
            ptau=powers / powers.sum(),
        )

    def parameters(self) -> Dict[str, Any]:
        return {
            "M": self.M,
            "gamma0": self.gamma0,
            "s": self.params.s,
            "Lconst": self.lconst,
            "z0": self.params.z0 if self.params.Lconst is None else None,
        }

    def _fingerprint_arrays(self) -> Sequence[np.ndarray]:
        return (np.array([self.gamma0]),)

    def check_domain(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> None:
        X = np.atleast_2d(X)
        rows = self._agents(X, agents)
        finite = np.all(np.isfinite(X), axis=1)
        bad = ~finite | (X[:, 1] <= DOMAIN_EPS) | (X[:, 0] <= -1.0)
        if np.any(bad):
            raise DomainError(
                "E1 requires x_{m,1} > -1 and x_{m,2} > 1e-9",
                agents=rows[bad],
            )

    def _chain(self, X: np.ndarray, agents: Optional[np.ndarray]):
        """erfc argument z with its gradient and Hessian"""
        self.check_domain(X, agents)
        x1, x2 = X[:, 0], X[:, 1]
        k = self._k
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            e = np.exp(k / x2)
            s = np.expm1(k / x2)
            ds = -k * e / x2 ** 2
            dds = e * (k ** 2 / x2 ** 4 + 2.0 * k / x2 ** 3)
            g = s ** -0.5
            dg = -0.5 * s ** -1.5 * ds
            ddg = 0.75 * s ** -2.5 * ds ** 2 - 0.5 * s ** -1.5 * dds
        z = self.gamma0 * x1 * g
        grad_z = self.gamma0 * np.stack([g, x1 * dg], axis=1)
        hess_z = np.zeros((X.shape[0], 2, 2))
        hess_z[:, 0, 1] = hess_z[:, 1, 0] = self.gamma0 * dg
        hess_z[:, 1, 1] = self.gamma0 * x1 * ddg
        bad = ~(np.isfinite(z) & np.all(np.isfinite(grad_z), axis=1)
                & np.all(np.isfinite(hess_z), axis=(1, 2)))
        if np.any(bad):
            raise DomainError("E1 derivatives are not finite", agents=self._agents(X, agents)[bad])
        return z, grad_z, hess_z

    def objective_terms(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> np.ndarray:
        z, _, _ = self._chain(np.atleast_2d(X), agents)
        return erfc(z)

    def gradients(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> np.ndarray:
        z, grad_z, _ = self._chain(np.atleast_2d(X), agents)
        phi = _TWO_OVER_SQRT_PI * np.exp(-z ** 2)
        return -phi[:, None] * grad_z

    def hessians(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> np.ndarray:
        z, grad_z, hess_z = self._chain(np.atleast_2d(X), agents)
        phi = _TWO_OVER_SQRT_PI * np.exp(-z ** 2)
        outer = grad_z[:, :, None] * grad_z[:, None, :]
        return -phi[:, None, None] * (hess_z - 2.0 * z[:, None, None] * outer)

    def constraints(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> np.ndarray:
        X = np.atleast_2d(X)
        self.check_domain(X, agents)
        return np.stack([np.log1p(X[:, 0]), X[:, 1] ** 2], axis=1)

    def jacobians_t(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> np.ndarray:
        X = np.atleast_2d(X)
        self.check_domain(X, agents)
        J = np.zeros((X.shape[0], 2, 2))
        J[:, 0, 0] = 1.0 / (1.0 + X[:, 0])
        J[:, 1, 1] = 2.0 * X[:, 1]
        return J

    def constraint_hessians(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> np.ndarray:
        X = np.atleast_2d(X)
        self.check_domain(X, agents)
        H = np.zeros((X.shape[0], 2, 2, 2))
        H[:, 0, 0, 0] = -1.0 / (1.0 + X[:, 0]) ** 2
        H[:, 1, 1, 1] = 2.0
        return H

    def initial_solution(self) -> BlockPoint:
        x1 = np.expm1(self.lconst / self.M)
        x2 = np.sqrt(1.0 / self.M)
        return BlockPoint(np.tile([x1, x2], (self.M, 1)))


# ==================== Quadratic problem ====================

class QuadraticProblem(ProblemDefinition):
    """f_m(x) = ||x - q_m||^2 with linear constraints h_m(x) = A_m x"""

    name = "quadratic"

    def __init__(self, params: QuadraticParams) -> None:
        self.params = params
        self.q = _frozen(params.q)
        self.A = _frozen(params.A)
        super().__init__(M=params.M, N=params.N, u=params.u, p0=params.p0, ptau=params.ptau)

    def parameters(self) -> Dict[str, Any]:
        return {
            "M": self.M,
            "N": self.N,
            "q": self.q.tolist(),
            "A": self.A.tolist(),
            "u": self.u.tolist(),
            "p0": self.p0.tolist(),
            "ptau": self.ptau.tolist(),
        }

    def _fingerprint_arrays(self) -> Sequence[np.ndarray]:
        return (self.q, self.A)

    def check_domain(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> None:
        X = np.atleast_2d(X)
        bad = ~np.all(np.isfinite(X), axis=1)
        if np.any(bad):
            raise DomainError("point has non-finite entries", agents=self._agents(X, agents)[bad])

    def objective_terms(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> np.ndarray:
        X = np.atleast_2d(X)
        diff = X - self.q[self._agents(X, agents)]
        return np.einsum("ki,ki->k", diff, diff)

    def gradients(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> np.ndarray:
        X = np.atleast_2d(X)
        return 2.0 * (X - self.q[self._agents(X, agents)])

    def hessians(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.broadcast_to(2.0 * np.eye(self.N), (X.shape[0], self.N, self.N)).copy()

    def constraints(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.einsum("kij,kj->ki", self.A[self._agents(X, agents)], X)

    def jacobians_t(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.transpose(self.A[self._agents(X, agents)], (0, 2, 1)).copy()

    def constraint_hessians(self, X: np.ndarray, agents: Optional[np.ndarray] = None) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.zeros((X.shape[0], self.N, self.N, self.N))

    def solve_exact(self, weights: Sequence[float]) -> BlockPoint:
        """Closed-form KKT point for the given weights (all must be positive)"""
        b = np.asarray(weights, dtype=float)
        if b.shape != (self.M,) or np.any(b <= 0):
            raise ValueError("solve_exact needs M positive weights")
        schur = np.einsum("mij,mkj,m->ik", self.A, self.A, 0.5 / b)
        rhs = np.einsum("mij,mj->i", self.A, self.q) - self.u
        lam = solve_small(schur, rhs, "exact_kkt")
        X = self.q - np.einsum("mji,j,m->mi", self.A, lam, 0.5 / b)
        return BlockPoint(X)

    def initial_solution(self) -> BlockPoint:
        return self.solve_exact(self.p0)


# ==================== Registry ====================

def _build_e1(params: Dict[str, Any], seed: int) -> ProblemDefinition:
    return E1Problem(E1Params(**params))


def _build_quadratic(params: Dict[str, Any], seed: int) -> ProblemDefinition:
    explicit = {"q", "A", "u", "p0", "ptau"}
    if explicit & set(params):
        missing = sorted(explicit - set(params))
        if missing:
            raise ConfigError(
                f"explicit quadratic instance is missing {missing}",
                field="problem.params." + missing[0],
            )
        return QuadraticProblem(QuadraticParams(**{k: params[k] for k in explicit}))
    generated = QuadraticParams.generate(
        M=int(params.get("M", 3)),
        N=int(params.get("N", 1)),
        seed=int(params.get("seed", seed)),
        spread=float(params.get("spread", 0.5)),
    )
    return QuadraticProblem(generated)


PROBLEM_REGISTRY = {
    "e1": _build_e1,
    "quadratic": _build_quadratic,
}

QUADRATIC_KEYS = {"M", "N", "seed", "spread", "q", "A", "u", "p0", "ptau"}


def build_problem(name: str, params: Optional[Dict[str, Any]] = None, seed: int = 0) -> ProblemDefinition:
    """
    Build a registered problem from configuration parameters.

    Args:
        name: Registry key ("e1" or "quadratic")
        params: Constructor parameters
        seed: Fallback seed for generated instances

    Returns:
        The problem instance
    """
    builder = PROBLEM_REGISTRY.get(name)
    if builder is None:
        raise ConfigError(
            f"unknown problem '{name}' (known: {sorted(PROBLEM_REGISTRY)})",
            field="problem.name",
        )
    params = dict(params or {})
    try:
        problem = builder(params, seed)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid parameters for problem '{name}': {exc}", field="problem.params") from exc
    logger.debug("Built problem %s", problem.identity)
    return problem
