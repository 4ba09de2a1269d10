"""Exception types shared across the package.

Validation problems (bad shapes, bad schemas, bad dates) and numerical
failures (indefinite precisions, singular constraint systems, divergent
filters) are kept on separate branches so the CLI can map them to distinct
exit codes.
"""


class BandmissError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(BandmissError):
    """Input did not satisfy a documented precondition."""


class NumericalError(BandmissError):
    """A numerical routine failed beyond its recovery policy."""


class DimensionMismatch(ValidationError):
    pass


class SchemaMismatch(ValidationError):
    pass


class NonMonotoneDates(ValidationError):
    pass


class UnknownTransform(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class WindowOutOfRange(ValidationError):
    """An inter-temporal constraint window extends outside the sample."""


class NotPositiveDefinite(NumericalError):
    def __init__(self, pivot_index, pivot_value, jittered):
        self.pivot_index = int(pivot_index)
        self.pivot_value = float(pivot_value)
        self.jittered = bool(jittered)
        suffix = "after jitter retry" if jittered else "before jitter"
        super().__init__(
            f"Cholesky pivot {pivot_index} = {pivot_value:.3e} not positive {suffix}"
        )


class SingularConstraint(NumericalError):
    pass


class NewtonDivergence(NumericalError):
    """Mode search for a proposal density failed to converge."""


class ExplosiveDraw(NumericalError):
    """Could not draw a stable coefficient matrix within the retry budget."""


class FilterNotFinite(NumericalError):
    pass
