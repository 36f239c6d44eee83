"""Exception types shared across the package."""


class SampleQuadError(Exception):
    """Base class for all library errors."""


class InvalidSpec(SampleQuadError):
    """A distribution or basis specification is malformed."""


class InvalidDomain(InvalidSpec):
    """A per-coordinate domain box has lo >= hi."""


class DimensionMismatch(SampleQuadError):
    """Points, bases, or matrices with incompatible dimensions."""


class NullSpaceFailure(SampleQuadError):
    """Null-space extraction could not meet its residual bound.

    Signals rank deficiency beyond expectation or catastrophic conditioning.
    """

    def __init__(self, msg, sample_index=None):
        super().__init__(msg)
        self.sample_index = sample_index


class SingularSystem(SampleQuadError):
    """Interpolatory weight solve on nodes that are not unisolvent."""


class DegenerateNullVector(SampleQuadError):
    """Null vector lacks a positive or a negative entry.

    Violates the zero-sum structure guaranteed by a constant basis function;
    indicates an upstream numerical failure.
    """


class InsufficientSamples(SampleQuadError):
    """Fewer samples than basis functions requested."""


class ExactnessViolation(SampleQuadError):
    """A finished rule failed its moment-residual bound."""


class NoRemovalExists(SampleQuadError):
    """No single node can be deleted while keeping weights non-negative."""


class NumericalTie(SampleQuadError):
    """Both endpoints of a removal interval coincide (degenerate vertex)."""


class CapExceeded(SampleQuadError):
    """Removal enumeration grew beyond the caller-supplied cap."""

    def __init__(self, msg, count=None, context=None):
        super().__init__(msg)
        self.count = count
        self.context = context


class ModeMismatch(SampleQuadError):
    """Extension request inconsistent with its declared mode."""


class MissingEvaluation(SampleQuadError):
    """An integrand value for a required node was not supplied."""


class AcceptanceTooLow(SampleQuadError):
    """Rejection or MH sampling acceptance rate collapsed."""


class ParseError(SampleQuadError):
    """Malformed sample file."""

    def __init__(self, msg, line=None):
        super().__init__(msg)
        self.line = line


class DimensionInconsistent(ParseError):
    """Rows of a sample file disagree on dimension."""
