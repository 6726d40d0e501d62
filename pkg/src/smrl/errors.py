"""Exception types shared across the package."""


class SmrlError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(SmrlError, ValueError):
    """A constructor or operation received an out-of-contract parameter."""


class InvalidInputError(SmrlError, ValueError):
    """Input data violates a precondition (shape, emptiness, finiteness)."""


class InvalidStateError(SmrlError, RuntimeError):
    """Operation called on an object in the wrong lifecycle state."""


class InvalidActionError(SmrlError, ValueError):
    """Environment received an action outside its action space."""


class InsufficientDataError(SmrlError, RuntimeError):
    """Not enough stored data to satisfy a sampling request."""


class BudgetExceededError(SmrlError, RuntimeError):
    """An enumeration or search would exceed its configured budget."""


class MetricUndefinedError(SmrlError, RuntimeError):
    """A metric has no defined value for the given inputs (reported as absent)."""


class ConfigError(SmrlError, ValueError):
    """Experiment configuration failed validation."""


class TrainingDivergedError(SmrlError, RuntimeError):
    """Training produced a non-finite loss or parameters."""
