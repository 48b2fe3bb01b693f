from typing import Optional, Sequence


class ObstacleProblemError(Exception):
    """Root of every error raised by the package."""


class InvalidSet(ObstacleProblemError, ValueError):
    pass


class EmptyInterior(ObstacleProblemError):
    pass


class UniformBoundViolated(ObstacleProblemError):
    def __init__(self, node: Sequence[int], radius: float, bound: float):
        self.node = tuple(node)
        self.radius = radius
        self.bound = bound
        super().__init__(f"set at node {self.node} reaches radius {radius:.6g} > bound {bound:.6g}")


class MarginViolated(ObstacleProblemError):
    def __init__(self, node: Sequence[int], margin: float):
        self.node = tuple(node)
        self.margin = margin
        super().__init__(f"witness margin {margin:.6g} < 0 at node {self.node}")


class EllipticityViolated(ObstacleProblemError):
    def __init__(self, node: int, t: float):
        self.node = node
        self.t = t
        super().__init__(f"coefficient not uniformly elliptic at node {node}, t={t:.6g}")


class SolverDiverged(ObstacleProblemError):
    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"linear solve stopped after {iterations} iterations, residual {residual:.3e}")


class PicardDiverged(ObstacleProblemError):
    def __init__(self, step: int, residual: float):
        self.step = step
        self.residual = residual
        super().__init__(f"Picard iteration failed at step {step} (residual {residual:.3e})")


class NotConverging(ObstacleProblemError):
    pass


class LadderInvalid(ObstacleProblemError, ValueError):
    pass


class InfeasibleTestFunction(ObstacleProblemError):
    def __init__(self, node: Sequence[int], distance: float):
        self.node = tuple(node)
        self.distance = distance
        super().__init__(f"test field leaves the obstacle at (step, node) {self.node} by {distance:.3e}")


class NonFinite(ObstacleProblemError):
    pass


class LipschitzViolated(ObstacleProblemError):
    pass


class InsufficientPaths(ObstacleProblemError):
    def __init__(self, standard_error: float, limit: float):
        self.standard_error = standard_error
        self.limit = limit
        super().__init__(f"standard error {standard_error:.3e} exceeds {limit:.3e}; add paths")


class ParseError(ObstacleProblemError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class ValidationError(ObstacleProblemError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"[{field}] {message}")


class EmitError(ObstacleProblemError):
    pass


class ScenarioFailure(ObstacleProblemError):
    def __init__(self, scenario: str, subcommand: str, cause: Exception):
        self.scenario = scenario
        self.subcommand = subcommand
        self.cause = cause
        super().__init__(f"{scenario}/{subcommand}: {type(cause).__name__}: {cause}")
