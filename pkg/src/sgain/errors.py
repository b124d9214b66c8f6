"""Exception types raised across the package."""


class SgainError(Exception):
    """Base class for all package errors."""


class GridError(SgainError, ValueError):
    """Bad Wiener grid parameters or an off-grid time query."""


class ModelError(SgainError, ValueError):
    """A model, linear system or feedback specification violates an invariant."""


class CooperativityError(ModelError):
    """An off-diagonal drift entry is negative."""


class UnsupportedNoiseError(ModelError):
    """A noise matrix is not diagonal."""


class ConfigError(ModelError):
    """A model configuration file could not be parsed or validated."""


class StructureError(SgainError, ValueError):
    """An operation was called on a system with the wrong structure tag."""


class PositivityError(SgainError, RuntimeError):
    """A state left the nonnegative orthant even after local step halving."""


class ConvergenceError(SgainError, RuntimeError):
    """Picard iteration did not reach tolerance.

    The partial result is available as ``estimate``.
    """

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate
