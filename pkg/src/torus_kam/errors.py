"""Exception taxonomy; the CLI maps these onto exit codes."""


class TorusKamError(Exception):
    """Base class for package errors."""


class LatticeMismatchError(TorusKamError):
    """Operands defined on different lattices."""


class NonZeroMeanError(TorusKamError):
    """Operation requires a zero-average field."""


class ConfigError(TorusKamError):
    """Invalid configuration or schema violation (CLI exit code 2)."""


class ResonanceError(TorusKamError):
    """A small divisor fell below threshold (CLI exit code 3)."""


class ContractionError(TorusKamError):
    """A Neumann/fixed-point iteration failed to contract (CLI exit code 3)."""

    def __init__(self, msg, factor=None):
        super().__init__(msg)
        self.factor = factor


class AssumptionError(TorusKamError):
    """Forcing/average-field nondegeneracy assumption violated (CLI exit code 3)."""


class SmallnessError(TorusKamError):
    """A smallness precondition of an iteration gate failed (CLI exit code 3)."""


class DivergenceError(TorusKamError):
    """Iteration residual increased on consecutive steps (CLI exit code 4)."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace
