"""
Exception hierarchy for the path-following toolkit.
Every error can be rendered as a flat dict for the CLI error JSON.
"""

from typing import Any, Dict, Iterable, List, Optional


class OptvoError(Exception):
    """Base class for all toolkit errors"""

    def __init__(self, message: str, **context: Any) -> None:
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = {k: v for k, v in context.items() if v is not None}

    def add_context(self, **context: Any) -> "OptvoError":
        """Attach caller context (node, iteration, solver) without replacing inner values"""
        for key, value in context.items():
            if value is not None and key not in self.context:
                self.context[key] = value
        return self

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"error": type(self).__name__, "message": self.message}
        payload.update(self.context)
        return payload

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ", ".join(f"{k}={v}" for k, v in self.context.items())
        return f"{self.message} ({details})"


def _indices(values: Optional[Iterable[int]]) -> Optional[List[int]]:
    if values is None:
        return None
    return [int(v) for v in values]


class DomainError(OptvoError, ValueError):
    """A point left the domain of the objective or constraint functions"""

    def __init__(self, message: str, agents: Optional[Iterable[int]] = None, **context: Any) -> None:
        super().__init__(message, agents=_indices(agents), **context)


class AssumptionViolation(OptvoError):
    """A matrix the trajectory mathematics has to invert is (numerically) singular"""

    def __init__(
        self,
        assumption: str,
        quantity: str,
        agents: Optional[Iterable[int]] = None,
        rcond: Optional[float] = None,
        **context: Any,
    ) -> None:
        message = f"Assumption {assumption} violated: {quantity} is singular"
        super().__init__(
            message,
            assumption=assumption,
            quantity=quantity,
            agents=_indices(agents),
            rcond=rcond,
            **context,
        )
        self.assumption = assumption
        self.quantity = quantity


class HomotopyInfeasibleError(OptvoError, ValueError):
    """Endpoint weights cannot be joined by b_m = p0_m * exp(integral of c_m)"""

    def __init__(self, message: str, agents: Optional[Iterable[int]] = None) -> None:
        super().__init__(message, agents=_indices(agents))


class WeightOverflowError(OptvoError, OverflowError):
    """Reconstructed weights overflowed"""


class ConvergenceError(OptvoError, RuntimeError):
    """Newton iteration failed to reach the requested tolerance"""


class LineSearchError(ConvergenceError):
    """Backtracking reached the minimum step without decreasing the residual"""


class ProblemMismatchError(OptvoError, ValueError):
    """Two trajectories do not belong to the same problem or horizon"""


class ConfigError(OptvoError, ValueError):
    """Invalid experiment configuration"""

    def __init__(
        self,
        message: str,
        field: Optional[str] = None,
        line: Optional[int] = None,
        column: Optional[int] = None,
    ) -> None:
        super().__init__(message, field=field, line=line, column=column)
        self.field = field


class ArtifactNotFoundError(OptvoError, FileNotFoundError):
    """A run artifact that was asked for does not exist"""

    def __init__(self, path: str) -> None:
        super().__init__(f"Artifact not found: {path}", path=str(path))
