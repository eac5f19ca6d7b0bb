"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2,
violated physical preconditions exit 3, numeric assertion failures exit 4.
"""


class ConfigError(ValueError):
    """A run configuration is malformed or names an unknown key."""


class PreconditionError(ValueError):
    """An input violates the physical precondition of an operation."""


class NumericAssertionError(RuntimeError):
    """A conservation law, cap or tolerance was breached during a computation."""


class CollisionCapExceeded(NumericAssertionError):
    pass


class JSetCapExceeded(NumericAssertionError):
    pass


class NotInContactError(PreconditionError):
    pass


class InvalidCreationError(PreconditionError):
    """A particle creation overlaps an existing particle."""


class DegenerateSamplingError(RuntimeError):
    """Every Monte Carlo sample was rejected, so no estimate can be formed."""


class DenseRegimeError(RuntimeError):
    """Hard-core rejection sampling accepts too rarely to be useful."""


class EmptyProbeSetError(PreconditionError):
    """No probe point survives the good-set filter."""
