"""
Data Models for the Path-Following Toolkit
All data structures shared by the problem definitions, the KKT trajectory
mathematics, the solvers and the reporting layer.
"""

from dataclasses import dataclass, field, fields, asdict
from enum import Enum
from typing import Any, Dict, List, NamedTuple, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .exceptions import ConfigError


# ==================== Enums ====================

class RunStatus(Enum):
    """Final status of a solver run"""
    CONVERGED = "converged"
    MAX_ITER = "max_iter"
    STALLED = "stalled"
    COMPLETED = "completed"  # single-pass solvers (benchmark, PCM)
    FAILED = "failed"


class SolverKind(Enum):
    """Solvers the harness can run"""
    BENCHMARK = "benchmark"
    PCM = "pcm"
    OPTVO = "optvo"
    NAIVE_NEWTON = "naive_newton"

    @property
    def label(self) -> str:
        return {
            SolverKind.BENCHMARK: "Benchmark",
            SolverKind.PCM: "PCM",
            SolverKind.OPTVO: "OP-TVO",
            SolverKind.NAIVE_NEWTON: "Naive Newton",
        }[self]


def _require(condition: bool, field_name: str, message: str) -> None:
    if not condition:
        raise ConfigError(f"{field_name}: {message}", field=field_name)


# ==================== Decision variables ====================

@dataclass
class BlockPoint:
    """Stacked decision vector x = [x_1; ...; x_M], one row per agent block"""
    blocks: np.ndarray  # (M, N)

    def __post_init__(self) -> None:
        self.blocks = np.array(self.blocks, dtype=float, copy=True)
        if self.blocks.ndim != 2:
            raise ValueError(f"BlockPoint expects an (M, N) array, got shape {self.blocks.shape}")

    @property
    def M(self) -> int:
        return self.blocks.shape[0]

    @property
    def N(self) -> int:
        return self.blocks.shape[1]

    @property
    def flat(self) -> np.ndarray:
        """Agent-major flat view of length N*M"""
        return self.blocks.reshape(-1)

    @classmethod
    def from_flat(cls, values: np.ndarray, M: int, N: int) -> "BlockPoint":
        values = np.asarray(values, dtype=float)
        if values.size != M * N:
            raise ValueError(f"Flat vector of length {values.size} cannot hold {M} blocks of {N}")
        return cls(values.reshape(M, N))

    def check_shape(self, M: int, N: int) -> None:
        if self.blocks.shape != (M, N):
            raise ValueError(f"Expected {M} blocks of length {N}, got shape {self.blocks.shape}")


# ==================== Theta grid and parametric paths ====================

@dataclass(frozen=True)
class ThetaGrid:
    """Uniform grid theta_j = j * delta_theta, j = 0..L, with tau = L * delta_theta"""
    tau: float
    delta_theta: float
    L: int = field(init=False)

    def __post_init__(self) -> None:
        _require(self.tau > 0, "tau", "horizon must be positive")
        _require(self.delta_theta > 0, "delta_theta", "step must be positive")
        steps = int(round(self.tau / self.delta_theta))
        _require(steps >= 1, "delta_theta", "step is larger than the horizon")
        _require(
            abs(steps * self.delta_theta - self.tau) <= 1e-12 * self.tau,
            "delta_theta",
            f"horizon {self.tau} is not an integer multiple of {self.delta_theta}",
        )
        object.__setattr__(self, "L", steps)

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.L + 1) * self.delta_theta

    def trapezoid_weights(self) -> np.ndarray:
        """Composite trapezoid weights shared by every quadrature on this grid"""
        weights = np.full(self.L + 1, self.delta_theta)
        weights[0] = weights[-1] = 0.5 * self.delta_theta
        return weights


@dataclass
class PsiVector:
    """Required integrals psi_m = log(p_tau_m / p_0_m)"""
    psi: np.ndarray

    @property
    def M(self) -> int:
        return self.psi.shape[0]


@dataclass
class ParametricPath:
    """Log-rates c(theta_j) on the grid nodes, one row per node"""
    values: np.ndarray  # (L+1, M)
    grid: ThetaGrid
    multiplier: Optional[np.ndarray] = None  # tuner multiplier when produced by tune()

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.grid.L + 1:
            raise ValueError(
                f"Path needs {self.grid.L + 1} node rows, got shape {self.values.shape}"
            )

    @property
    def M(self) -> int:
        return self.values.shape[1]

    def integral(self) -> np.ndarray:
        return trapezoid(self.values, dx=self.grid.delta_theta, axis=0)

    def cumulative(self) -> np.ndarray:
        return cumulative_trapezoid(self.values, dx=self.grid.delta_theta, axis=0, initial=0.0)


# ==================== KKT quantities ====================

@dataclass
class AgentLocals:
    """Per-agent quantities behind the sensitivity matrix; the leading axis indexes agents"""
    v: np.ndarray  # (M, N)    v_m = -J_m^{-1} grad f(x_m)
    G: np.ndarray  # (M, N, N) weight-free factor of the Lagrangian Hessian
    D: np.ndarray  # (M, N, N) D_m = J_m^T G_m^{-1}
    J: np.ndarray  # (M, N, N) transpose of the constraint Jacobian

    def agent(self, m: int) -> Dict[str, np.ndarray]:
        return {"v": self.v[m], "G": self.G[m], "D": self.D[m], "J": self.J[m]}


@dataclass
class GammaMatrix:
    """NM x M sensitivity matrix; row block m' holds gamma_{m'm} for every column m"""
    matrix: np.ndarray  # (N*M, M)
    M: int
    N: int

    @property
    def blocks(self) -> np.ndarray:
        """blocks[m', m] is the length-N vector gamma_{m'm}"""
        return self.matrix.reshape(self.M, self.N, self.M).transpose(0, 2, 1)

    def apply(self, c: np.ndarray) -> np.ndarray:
        """Velocity Gamma @ c as an (M, N) block array"""
        return (self.matrix @ np.asarray(c, dtype=float)).reshape(self.M, self.N)

    @classmethod
    def zeros(cls, M: int, N: int) -> "GammaMatrix":
        return cls(np.zeros((N * M, M)), M, N)


@dataclass
class KKTState:
    """Primal point, common multiplier and the weights it is a KKT point for"""
    x: BlockPoint
    lam: np.ndarray
    b: np.ndarray


class KKTResidual(NamedTuple):
    stationarity: float
    feasibility: float


@dataclass
class AssumptionReport:
    """Worst reciprocal conditions of the matrices the trajectory mathematics inverts"""
    rcond_J: float
    rcond_G: float
    rcond_diag_v: float
    rcond_sum_D: float
    rcond_lagrangian_hessian: float
    threshold: float
    worst_agents: Dict[str, int] = field(default_factory=dict)

    @property
    def assumption_ii(self) -> bool:
        return self.rcond_J >= self.threshold

    @property
    def assumption_iii(self) -> bool:
        return min(self.rcond_G, self.rcond_diag_v, self.rcond_sum_D,
                   self.rcond_lagrangian_hessian) >= self.threshold

    @property
    def ok(self) -> bool:
        return self.assumption_ii and self.assumption_iii


# ==================== Trajectories and reports ====================

@dataclass
class Trajectory:
    """Predicted path x_hat(theta_j) with the sweep velocities and their mean"""
    grid: ThetaGrid
    points: np.ndarray  # (L+1, M, N)
    velocities: np.ndarray  # (L, M, N)
    m_hat: np.ndarray  # (N*M,)
    weights: np.ndarray  # (L+1, M) reconstructed b(theta_j)
    problem_id: str
    path: Optional[ParametricPath] = None
    gammas: Optional[np.ndarray] = None  # (L+1, N*M, M) when kept for tuning
    polished: Optional[np.ndarray] = None  # (M, N) Newton-polished terminal point
    stats: Dict[str, Any] = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.points.shape[1]

    @property
    def N(self) -> int:
        return self.points.shape[2]

    def point(self, j: int) -> BlockPoint:
        return BlockPoint(self.points[j])

    @property
    def terminal(self) -> BlockPoint:
        if self.polished is not None:
            return BlockPoint(self.polished)
        return BlockPoint(self.points[-1])


@dataclass
class IterationRecord:
    """One Table-1 row"""
    iteration: int
    optimal_value: float
    constraint_violation: float
    elapsed_time_s: float
    linear_solves: int
    od: Optional[float] = None
    ohat_d: Optional[float] = None  # Delta-theta scaled
    ohat_raw: Optional[float] = None
    curvature: Optional[float] = None
    euler_error_bound: Optional[float] = None
    velocity_deviation_bound: Optional[float] = None


@dataclass
class RunReport:
    """Per-solver run summary mirroring the Table-1 columns"""
    solver: str
    problem: str
    status: RunStatus
    records: List[IterationRecord] = field(default_factory=list)
    terminal_point: Optional[List[List[float]]] = None
    linear_solves: int = 0
    factorizations: int = 0
    solves: int = 0
    metadata: Dict[str, Any] = field(default_factory=dict)
    trajectory: Optional[Trajectory] = field(default=None, repr=False, compare=False)
    history: List[Trajectory] = field(default_factory=list, repr=False, compare=False)

    @property
    def final(self) -> Optional[IterationRecord]:
        return self.records[-1] if self.records else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "solver": self.solver,
            "problem": self.problem,
            "status": self.status.value,
            "records": [asdict(r) for r in self.records],
            "terminal_point": self.terminal_point,
            "linear_solves": self.linear_solves,
            "factorizations": self.factorizations,
            "solves": self.solves,
            "metadata": to_dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunReport":
        return cls(
            solver=data["solver"],
            problem=data["problem"],
            status=RunStatus(data["status"]),
            records=[IterationRecord(**r) for r in data.get("records", [])],
            terminal_point=data.get("terminal_point"),
            linear_solves=data.get("linear_solves", 0),
            factorizations=data.get("factorizations", 0),
            solves=data.get("solves", 0),
            metadata=data.get("metadata", {}),
        )


# ==================== Problem parameters ====================

# starting-rate decay of the shipped E1 experiments
E1_INIT_DECAY = 8.0


@dataclass
class E1Params:
    """Erfc objective with a log and a quadratic coupling constraint"""
    M: int = 100
    gamma0: float = 40.0
    s: float = 3.0  # target weight exponent, a_m proportional to m^{-s}
    Lconst: Optional[float] = None  # None: derived from z0
    z0: float = 3.0  # erfc argument at the symmetric start when Lconst is derived

    def __post_init__(self) -> None:
        _require(int(self.M) == self.M and self.M >= 2, "M", "needs at least two agents")
        self.M = int(self.M)
        _require(self.gamma0 > 0, "gamma0", "must be positive")
        _require(self.z0 > 0, "z0", "must be positive")
        if self.Lconst is not None:
            _require(self.Lconst > 0, "Lconst", "must be positive")

    def resolved_lconst(self) -> float:
        if self.Lconst is not None:
            return float(self.Lconst)
        # symmetric start x_{m,2} = 1/sqrt(M); pick x_{m,1} so the erfc argument equals z0
        s0 = np.expm1(0.1 * np.log(2.0) * np.sqrt(self.M))
        x1 = self.z0 * np.sqrt(s0) / self.gamma0
        return float(self.M * np.log1p(x1))


@dataclass
class QuadraticParams:
    """Separable quadratic objective ||x_m - q_m||^2 under linear coupling sum A_m x_m = u"""
    q: np.ndarray  # (M, N)
    A: np.ndarray  # (M, N, N)
    u: np.ndarray  # (N,)
    p0: np.ndarray  # (M,)
    ptau: np.ndarray  # (M,)

    def __post_init__(self) -> None:
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))
        M, N = self.q.shape
        self.A = np.asarray(self.A, dtype=float).reshape(M, N, N)
        self.u = np.asarray(self.u, dtype=float).reshape(N)
        self.p0 = np.asarray(self.p0, dtype=float).reshape(M)
        self.ptau = np.asarray(self.ptau, dtype=float).reshape(M)
        _require(M >= 1, "q", "needs at least one agent")
        conditions = np.linalg.cond(self.A)
        bad = np.flatnonzero(~np.isfinite(conditions) | (conditions > 1e12))
        _require(bad.size == 0, "A", f"matrices of agents {bad.tolist()} are not invertible")

    @property
    def M(self) -> int:
        return self.q.shape[0]

    @property
    def N(self) -> int:
        return self.q.shape[1]

    @classmethod
    def generate(cls, M: int = 3, N: int = 1, seed: int = 0, spread: float = 0.5) -> "QuadraticParams":
        """Seeded random instance; target weights are p0 scaled by exp(spread * U(-1, 1))"""
        _require(M >= 1, "M", "needs at least one agent")
        _require(N >= 1, "N", "needs at least one component")
        _require(spread >= 0, "spread", "must be non-negative")
        rng = np.random.default_rng(seed)
        q = rng.normal(size=(M, N))
        A = np.empty((M, N, N))
        for m in range(M):
            while True:
                candidate = np.eye(N) + 0.3 * rng.normal(size=(N, N))
                if np.linalg.cond(candidate) < 10.0:
                    break
            A[m] = candidate
        u = rng.normal(size=N)
        p0 = np.full(M, 1.0 / M)
        ptau = p0 * np.exp(spread * rng.uniform(-1.0, 1.0, size=M))
        return cls(q=q, A=A, u=u, p0=p0, ptau=ptau)


# ==================== Solver configuration ====================

@dataclass
class SolverConfig:
    """OP-TVO hyper-parameters"""
    tau: float = 3.0
    delta_theta: float = 1e-2
    mu: float = 1e-7
    o_th: float = 1e-5
    max_iter: int = 20
    polish: bool = False
    polish_tol: float = 1e-10
    polish_max_steps: int = 30
    init_decay: float = 0.0  # 0: constant starting rates psi / tau

    def __post_init__(self) -> None:
        _require(self.tau > 0, "tau", "must be positive")
        _require(self.delta_theta > 0, "delta_theta", "must be positive")
        _require(self.mu > 0, "mu", "must be positive")
        _require(self.init_decay >= 0, "init_decay", "must be >= 0")
        _require(self.o_th > 0, "o_th", "must be positive")
        _require(int(self.max_iter) == self.max_iter and self.max_iter >= 1, "max_iter", "must be an integer >= 1")
        _require(self.polish_tol > 0, "polish_tol", "must be positive")
        _require(self.polish_max_steps >= 1, "polish_max_steps", "must be >= 1")
        self.max_iter = int(self.max_iter)

    def grid(self) -> ThetaGrid:
        return ThetaGrid(self.tau, self.delta_theta)


@dataclass
class PCMConfig:
    """Prediction-correction baseline settings"""
    delta_theta: float = 1e-4
    corrector_steps: int = 1
    corrector_tol: float = 1e-9
    tau: Optional[float] = None  # defaults to the OP-TVO horizon

    def __post_init__(self) -> None:
        _require(self.delta_theta > 0, "delta_theta", "must be positive")
        _require(int(self.corrector_steps) == self.corrector_steps and self.corrector_steps >= 0,
                 "corrector_steps", "must be an integer >= 0")
        _require(self.corrector_tol > 0, "corrector_tol", "must be positive")
        if self.tau is not None:
            _require(self.tau > 0, "tau", "must be positive")
        self.corrector_steps = int(self.corrector_steps)

    def grid(self, default_tau: float = 3.0) -> ThetaGrid:
        return ThetaGrid(self.tau if self.tau is not None else default_tau, self.delta_theta)


@dataclass
class BenchmarkConfig:
    """Fine-grid reference settings"""
    delta_theta: float = 1e-4
    polish: bool = True
    polish_tol: float = 1e-10
    polish_max_steps: int = 30
    tau: Optional[float] = None

    def __post_init__(self) -> None:
        _require(self.delta_theta > 0, "delta_theta", "must be positive")
        _require(self.polish_tol > 0, "polish_tol", "must be positive")
        _require(self.polish_max_steps >= 1, "polish_max_steps", "must be >= 1")
        if self.tau is not None:
            _require(self.tau > 0, "tau", "must be positive")

    def grid(self, default_tau: float = 3.0) -> ThetaGrid:
        return ThetaGrid(self.tau if self.tau is not None else default_tau, self.delta_theta)


@dataclass
class OutputConfig:
    directory: str = "results/run"
    dump_trajectories: bool = True
    dump_baselines: bool = False  # fine-grid benchmark and PCM dumps are large
    record_timings: bool = True


@dataclass
class ExperimentConfig:
    """Everything one `run` invocation needs"""
    problem_name: str = "e1"
    problem_params: Dict[str, Any] = field(default_factory=dict)
    solver: SolverConfig = field(default_factory=SolverConfig)
    pcm: PCMConfig = field(default_factory=PCMConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0
    solvers: List[SolverKind] = field(
        default_factory=lambda: [SolverKind.BENCHMARK, SolverKind.PCM, SolverKind.OPTVO]
    )


# ==================== Export Functions ====================

def to_dict(obj) -> Any:
    """Convert dataclasses, enums and numpy values to JSON-ready structures"""
    if hasattr(obj, '__dataclass_fields__'):
        return {f.name: to_dict(getattr(obj, f.name)) for f in fields(obj)
                if f.name not in ("trajectory", "history", "gammas")}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, dict):
        return {k: to_dict(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    return obj
