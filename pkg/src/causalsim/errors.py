"""Exception types shared across the package."""


class CausalSimError(Exception):
    """Base class for all errors raised by causalsim."""


class DanglingRead(CausalSimError):
    """A read returned a non-bottom value that no write in the history produced."""


class BudgetExceeded(CausalSimError):
    """Input is too large for a brute-force search."""


class UnreleasedHold(CausalSimError):
    """A held message was still parked when the run reached its horizon."""


class NondeterminismDetected(CausalSimError):
    """A handler tried to read state it is not allowed to see."""


class ClockAccessDenied(NondeterminismDetected):
    """A handler read simulated time without declaring clock access."""


class DuplicateName(CausalSimError):
    pass


class ProtocolShapeMismatch(CausalSimError):
    """The protocol cannot run the requested kind of transaction or scenario."""


class NoProbeReads(CausalSimError):
    """Progress cannot be judged: a written object has no post-quiescence read."""


class PreconditionViolation(CausalSimError):
    pass
