"""Exception hierarchy shared across the package."""


class CharflowError(Exception):
    """Base class for all charflow errors."""


class DomainError(CharflowError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SizeError(CharflowError, ValueError):
    """An input exceeds a configured size limit."""


class IntegrationError(CharflowError, RuntimeError):
    """Adaptive integration failed (e.g. step underflow).

    Carries the partial result, if any, in ``partial``.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class PushforwardError(CharflowError, RuntimeError):
    """The map handed to a push-forward failed on an atom."""

    def __init__(self, message, atom_index=None, position=None):
        super().__init__(message)
        self.atom_index = atom_index
        self.position = position


class CFLError(CharflowError, ValueError):
    """Time step violates the CFL stability condition."""


class TrackingError(CharflowError, RuntimeError):
    """Atoms of a trajectory cannot be tracked across snapshots."""


class DecompositionError(CharflowError, RuntimeError):
    """Path peeling could not make progress on a current."""


class ConfigError(CharflowError, ValueError):
    """Invalid CLI or config-file input."""
