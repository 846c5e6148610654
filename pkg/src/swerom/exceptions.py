"""Exception types raised across the package."""


class SweRomError(Exception):
    """Base class for all package errors."""


class InvalidSizeError(SweRomError, ValueError):
    pass


class PositivityError(SweRomError, ValueError):
    """Fluid depth became non-positive at some node."""

    def __init__(self, node, value):
        self.node = int(node)
        self.value = float(value)
        super().__init__(f"non-positive depth h={value:.6g} at node {node}")


class DivergenceError(SweRomError, RuntimeError):
    """Newton iteration did not reach the requested tolerance."""

    def __init__(self, residual, iterations):
        self.residual = float(residual)
        self.iterations = int(iterations)
        super().__init__(
            f"Newton failed to converge in {iterations} iterations "
            f"(last residual norm {residual:.3e})"
        )


class LinearSolveError(SweRomError, RuntimeError):
    def __init__(self, message, condition=None):
        self.condition = condition
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        super().__init__(message)


class StepError(SweRomError, RuntimeError):
    """A time step failed; ``step`` is the index of the step being computed."""

    def __init__(self, step, cause):
        self.step = int(step)
        self.cause = cause
        super().__init__(f"step {step}: {cause}")


class DegenerateReferenceError(SweRomError, ZeroDivisionError):
    pass


class DegenerateBasisError(SweRomError, ValueError):
    pass


class MemoryGuardError(SweRomError, MemoryError):
    pass


class FormatError(SweRomError, ValueError):
    """Binary file has a bad magic, version, or length."""


class ExperimentError(SweRomError, RuntimeError):
    """Failure inside an experiment, tagged with the phase (fom, offline, online)."""

    def __init__(self, phase, cause):
        self.phase = phase
        self.cause = cause
        super().__init__(f"[{phase}] {type(cause).__name__}: {cause}")
