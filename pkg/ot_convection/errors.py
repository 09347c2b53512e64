from typing import Dict, List, Optional


class OTConvectionError(Exception):
    pass


class ConfigError(OTConvectionError):
    def __init__(self, *args, errors: Optional[Dict[str, List[str]]] = None):
        super().__init__(*args)
        self.errors = errors or {}

    def __str__(self):
        if not self.errors:
            return super().__str__()
        lines = [f"{key}: {'; '.join(messages)}" for key, messages in sorted(self.errors.items())]
        return "Invalid configuration:\n  " + "\n  ".join(lines)


class SolverError(OTConvectionError):
    def __init__(self, *args, residual: Optional[float] = None):
        super().__init__(*args)
        self.residual = residual


class CFLError(SolverError):
    def __init__(self, *args, cfl: float):
        super().__init__(*args)
        self.cfl = cfl


class ConvergenceError(SolverError):
    def __init__(self, *args, residual: float, iterations: int):
        super().__init__(*args, residual=residual)
        self.iterations = iterations


class AssignmentSizeError(SolverError):
    def __init__(self, *args, size: int, limit: int):
        super().__init__(*args)
        self.size = size
        self.limit = limit


class AuctionError(SolverError):
    def __init__(self, *args, epsilon: float, gap: float):
        super().__init__(*args, residual=gap)
        self.epsilon = epsilon
        self.gap = gap


class InstabilityError(SolverError):
    def __init__(self, *args, growth: float):
        super().__init__(*args)
        self.growth = growth


class StaleAssignmentError(SolverError):
    pass


class InvariantCheck:
    """ Running worst value of one in-run check; passes while worst <= tolerance. """

    def __init__(self, name: str, tolerance: float):
        self.name = name
        self.tolerance = tolerance
        self.worst = 0.0
        self.worst_step = None

    def record(self, value: float, step: Optional[int] = None):
        if self.worst_step is None or value > self.worst:
            self.worst = max(self.worst, float(value))
            self.worst_step = step

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance

    def serialize(self) -> dict:
        return {"worst": self.worst, "tolerance": self.tolerance, "passed": self.passed, "step": self.worst_step}


class ShapeMismatchError(OTConvectionError):
    def __init__(self, *args, artifact: str, left: tuple, right: tuple):
        super().__init__(*args)
        self.artifact = artifact
        self.left = left
        self.right = right
