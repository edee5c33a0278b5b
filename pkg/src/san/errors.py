"""Exceptions raised by the SAN engine

All errors derive from `SanError`, so command line tools can catch
a single exception type and turn it into the "model error" exit code.
"""
from typing import NamedTuple


class Diagnostic(NamedTuple):
    """Single validation finding, see :func:`src.san.model.validate`"""
    line: int  #: line in the model file, 0 if unknown
    column: int  #: column in the model file, 0 if unknown
    location: str  #: e.g. 'mm1/activity:arrival/case[0]'
    rule: str  #: rule identifier, e.g. 'DUPLICATE_PLACE'
    message: str

    def format(self, filename=None):
        """Format diagnostic as 'file:line:column: RULE: message'"""
        prefix = f"{filename}:" if filename else ''
        return f"{prefix}{self.line}:{self.column}: {self.rule}: {self.location}: {self.message}"


class SanError(Exception):
    """Base class for all errors of the SAN engine"""


class ModelSyntaxError(SanError):
    """Malformed expression or model file

    :ivar int line: 1-based line of the offending token
    :ivar int column: 1-based column of the offending token
    :ivar list[str] expected: names of tokens the parser would accept
    """
    def __init__(self, message, line, column, expected=()):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column
        self.expected = sorted(expected)


class ExprTypeError(SanError):
    """Expression does not type-check in its context"""


class EvaluationError(SanError):
    """Base class for runtime expression evaluation errors"""


class DivisionByZero(EvaluationError):
    pass


class IndexOutOfRange(EvaluationError):
    pass


class AccessViolation(EvaluationError):
    """Read or write of a place replica that was not granted"""


class ValidationError(SanError):
    """Model failed validation; carries the list of diagnostics"""
    def __init__(self, diagnostics, filename=None):
        self.diagnostics = list(diagnostics)
        self.filename = filename
        super().__init__('\n'.join(diag.format(filename) for diag in self.diagnostics))


class CompositionError(SanError):
    """Base class for errors in the composition tree"""


class UnknownPlace(CompositionError):
    pass


class UnknownPath(CompositionError):
    pass


class KindMismatch(CompositionError):
    pass


class ScopeError(CompositionError):
    """repindex(), n or P.repshared() used outside of the replicator allowing it"""


class NotRepShared(CompositionError):
    pass


class InvalidSharingSpec(CompositionError, ValidationError):
    """NARep sharing specification violates one of its rules

    :ivar str rule: rule identifier, e.g. 'OWNER_NOT_IN_ACCESS'
    :ivar str place: offending place key
    """
    def __init__(self, place, rule, message, line=0, column=0):
        self.place = place
        self.rule = rule
        ValidationError.__init__(self, [Diagnostic(line, column, f"sharing:{place}", rule, message)])


class InconsistentInitialization(SanError):
    """Aliased place replicas received different initial values"""


class SimulationError(SanError):
    pass


class NegativeMarking(SimulationError):
    pass


class LivelockError(SimulationError):
    pass


class InvalidRate(SimulationError):
    """Rate, delay or weight evaluated to an invalid value while enabled"""


class RewardError(SanError):
    pass


class HorizonExceeded(RewardError):
    pass


class EstimationError(RewardError):
    pass
