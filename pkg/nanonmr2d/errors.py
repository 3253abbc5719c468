"""Exception types raised by the simulation and inversion stages.

Argument validation uses plain ``ValueError`` throughout; the classes below
mark failures that callers (mainly the pipeline) want to tell apart.
"""

from __future__ import annotations


class DegenerateGeometryError(ValueError):
    """Two positions coincide, so a coupling tensor is undefined."""


class ModelValidityError(ValueError):
    """Input lies outside the validity range of the physical model."""


class ScheduleError(ValueError):
    """A pulse schedule violates timing constraints or is empty."""


class AmbiguousAssignmentError(ValueError):
    """A spectral line cannot be assigned to a single electron manifold."""


class InfeasibleOrderError(ValueError):
    """No discretizable vertex order exists.

    Attributes:
        vertex: First vertex that could not be placed.
    """

    def __init__(self, vertex: object) -> None:
        super().__init__(f"vertex {vertex!r} has fewer than three placed neighbours")
        self.vertex = vertex


class NoFitError(RuntimeError):
    """A fit did not converge within its multistart budget.

    Attributes:
        best_residual: Lowest chi-square reached by any start.
    """

    def __init__(self, message: str, best_residual: float) -> None:
        super().__init__(f"{message} (best residual {best_residual:.6g})")
        self.best_residual = best_residual


class NoSolutionError(RuntimeError):
    """Branch-and-prune pruned every branch."""


class PipelineError(RuntimeError):
    """A pipeline stage failed.

    Attributes:
        stage: Name of the failing stage.
    """

    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.detail = message
