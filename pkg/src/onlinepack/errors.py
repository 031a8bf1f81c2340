"""Exception types shared across the library."""


class OnlinePackError(Exception):
    """Base class for all library errors."""


class InstanceError(OnlinePackError):
    """Instance data violates the packing assumptions (ranges, sparsity, tree shape)."""


class SupportError(OnlinePackError):
    """A prefix was presented that is not in the support of the information process."""


class ParameterError(OnlinePackError):
    """A solver or smoothing parameter is out of its admissible range."""


class ContractViolationError(OnlinePackError):
    """An internal caller contract was broken (e.g. eval values outside [-1, 2])."""


class MemoIntegrityError(OnlinePackError):
    """A memo-table entry would have been overwritten; entries are write-once."""


class SequencingError(OnlinePackError):
    """A streaming policy was called out of period order."""


class FeasibilityAuditError(OnlinePackError):
    """A hard feasibility audit failed; carries the offending episode trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ConvergenceError(OnlinePackError):
    """An iterative oracle solve did not reach its tolerance within the cap."""


class CapacityError(OnlinePackError):
    """An enumeration exceeded its node or state-space cap."""


class ConfigError(OnlinePackError):
    """A CLI or experiment configuration is invalid."""
