"""Exception types shared across the package."""


class GossipError(Exception):
    """Base class for all package errors."""


class ValidationError(GossipError, ValueError):
    """Input failed a structural check (shape, sign, row sums, config field)."""


class IrreducibilityError(ValidationError):
    """A matrix whose support graph is not strongly connected was given where
    irreducibility is required."""


class NumericAbort(GossipError, FloatingPointError):
    """NaN or Inf appeared in simulated state.

    Carries the tick and node where it was first seen, plus the seed of the
    replica, so a run can be reproduced.
    """

    def __init__(self, message, *, tick=None, node=None, seed=None):
        super().__init__(message)
        self.tick = tick
        self.node = node
        self.seed = seed
