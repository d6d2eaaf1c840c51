"""Exception hierarchy shared by every module."""


class BsplitError(Exception):
    """Base class for library errors."""


class ValidationError(BsplitError):
    """Input rejected before any computation ran (CLI exit code 2)."""


class NumericalError(BsplitError):
    """Computation started but produced an unusable value (CLI exit code 3).

    Parameters
    ----------
    message : str
    iteration : int, optional
        Zero-based iteration index at which the failure occurred.
    """

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
        self.iteration = iteration


class DomainError(ValidationError, ValueError):
    """A point lies outside the domain of a kernel or of its conjugate."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ShapeError(ValidationError, ValueError):
    """Dimension mismatch between operands."""


class ConstructionError(ValidationError, ValueError):
    """An object could not be built from the supplied parameters."""


class SchemaError(ValidationError):
    """An input document does not follow the expected layout."""


class SizeError(ValidationError):
    """Instance too large for an exhaustive routine."""


class DegenerateInput(ValidationError):
    """A row or column with zero mass where positive mass is required."""


class MissingOptimum(ValidationError):
    """A certificate needs the optimal value or a minimizer and got neither."""


class MisalignedTraces(ValidationError):
    """Two traces cannot be compared index by index."""


class CertificateError(NumericalError):
    """A resolvent oracle returned a point violating its optimality condition."""


class UnboundedSubgradient(NumericalError):
    """A subgradient exceeded the configured sup-norm bound."""


class DegenerateKernel(NumericalError):
    """A scaling denominator vanished (typically an underflowed Gibbs kernel)."""


class StabilityError(NumericalError):
    """A non-finite value appeared in an iterate."""


class ExponentOverflow(NumericalError, OverflowError):
    """A multiplicative update overflowed; ``index`` names the constraint."""

    def __init__(self, message, index=None, iteration=None):
        super().__init__(message, iteration)
        self.index = index
