"""Exception hierarchy."""


class ConsensusError(Exception):
    """Base class for every error raised by this package."""


# constraint sets
class ConstraintError(ConsensusError):
    pass


class NonUnitDirection(ConstraintError):
    pass


class EmptyReach(ConstraintError):
    pass


class OriginNotMember(ConstraintError):
    pass


# graphs
class GraphError(ConsensusError):
    pass


class InconsistentDimensions(GraphError):
    pass


class WindowBoundViolation(GraphError):
    pass


class FloorConflict(GraphError):
    pass


# protocol
class ProtocolError(ConsensusError):
    pass


class GainOutOfRange(ProtocolError):
    pass


class PolicyViolation(ProtocolError):
    pass


class BufferUnderflow(ProtocolError):
    pass


class StepError(ProtocolError):
    """A step failed; ``step`` carries the failing time index."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step}: {type(cause).__name__}: {cause}")
        self.step = step
        self.cause = cause


# analysis
class AnalysisError(ConsensusError):
    pass


class DimensionMismatch(AnalysisError):
    pass


class StochasticityViolation(AnalysisError):
    pass


class InsufficientHorizon(AnalysisError):
    pass


class DegenerateFit(AnalysisError):
    pass


# harness
class ParseError(ConsensusError):
    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


class ValidationError(ConsensusError):
    def __init__(self, assumption: str, entity: str, detail: str):
        super().__init__(f"[{assumption}] {entity}: {detail}")
        self.assumption = assumption
        self.entity = entity
        self.detail = detail


class AcceptanceFailure(ConsensusError):
    def __init__(self, criterion: str, detail: str):
        super().__init__(f"{criterion}: {detail}")
        self.criterion = criterion
        self.detail = detail
