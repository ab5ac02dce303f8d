"""Exception types shared across the package."""


class ForgetlabError(Exception):
    """Base class for package-specific failures."""


class InputError(ForgetlabError, ValueError):
    """Malformed input: dimension mismatch, values outside their domain."""


class DegeneratePartitionError(InputError):
    """Bayes partition requested for coincident means."""


class BoundaryError(InputError):
    """Parameter value at the boundary of its open domain."""


class PreconditionError(ForgetlabError):
    """A documented operation precondition does not hold."""


class MethodError(ForgetlabError):
    """Requested estimation method is not applicable to the integrand."""


class NumericError(ForgetlabError, ArithmeticError):
    """Non-finite values or failed numerical procedure."""


class ConsistencyError(ForgetlabError):
    """Two independent computation routes disagree beyond tolerance."""


class ScopeError(ForgetlabError):
    """Input outside the supported scope (e.g. non-1D location family)."""


class ValidationError(ForgetlabError, ValueError):
    """Scenario configuration failed fail-fast validation."""
