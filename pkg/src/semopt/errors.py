"""Exception types shared across the toolkit."""


class ValidationError(ValueError):
    """Invalid argument or unsupported configuration."""


class NumericFailure(ArithmeticError):
    """A numerical computation produced NaN/Inf or failed to converge."""


class StepFailure(NumericFailure):
    """A single time step could not be completed (Newton/GMRES breakdown)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class IntegrationError(NumericFailure):
    """Time integration aborted (step budget exhausted or repeated step failure)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CheckpointError(RuntimeError):
    """A backward sweep required a forward state that is not available."""


class ScheduleError(ValueError):
    """A checkpoint schedule violates its invariants."""


class LineSearchError(RuntimeError):
    """Strong-Wolfe line search failed to produce an acceptable step."""
