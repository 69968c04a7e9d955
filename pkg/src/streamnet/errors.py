"""Exception types shared across the runtime, the kernels and the bench CLI."""


class CoordinationError(Exception):
    """Base class for network construction and execution failures."""


class ValidationError(CoordinationError):
    """A network expression failed compile-time validation."""


class RoutingError(CoordinationError):
    """A record reached a routing point where no alternative accepts it."""


class ContractError(CoordinationError):
    """A box emitted a record that matches none of its declared output patterns."""


class KernelError(CoordinationError):
    """A box kernel raised; carries the node name for diagnosis."""


class DivergenceError(CoordinationError):
    """A replication or feedback safety cap was exceeded."""


class ConservationError(CoordinationError):
    """The record-conservation ledger failed to balance after a run."""


class DeadlockError(CoordinationError):
    """The network went quiescent with unmet obligations (or all workers blocked)."""

    def __init__(self, message, parked=None):
        super().__init__(message)
        self.parked = parked or []


class SingleAssignmentError(CoordinationError):
    """An item key was written twice with differing values."""


class InvalidTerminationError(CoordinationError):
    """The tuple-space engine went quiescent with prescribed steps unexecuted."""

    def __init__(self, message, unexecuted=None):
        super().__init__(message)
        self.unexecuted = unexecuted or []


class NumericError(Exception):
    """A numeric kernel failed (non-positive pivot, zero triangular diagonal).

    ``pivot_index`` is the offending index within the tile; ``location`` is
    filled in by tiled drivers with the (k, i, j) tile coordinates.
    """

    def __init__(self, message, pivot_index=None, location=None):
        super().__init__(message)
        self.pivot_index = pivot_index
        self.location = location
