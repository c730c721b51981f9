"""Exception types shared across the package."""


class HypodecayError(Exception):
    """Base class for all package errors."""


class DimensionError(HypodecayError):
    """Non-square or mismatched matrix/vector dimensions."""


class InvalidInputError(HypodecayError):
    """NaN/Inf entries or otherwise malformed numeric input."""


class ParameterError(HypodecayError):
    """A scalar parameter is outside its admissible range."""


class RangeError(HypodecayError):
    """Result would overflow (e.g. matrix exponential of a huge argument)."""


class SystemConditionError(HypodecayError):
    """The (diffusion, drift) pair fails one of the admissibility conditions."""


class NoUniqueSolutionError(HypodecayError):
    """Lyapunov equation has no unique solution (drift not positive stable)."""


class ConditioningError(HypodecayError):
    """A transform is numerically singular; carries a condition-number diagnostic."""

    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class CertificateInfeasibleError(HypodecayError):
    """Requested decay rate is not certifiable (defective slowest eigenvalue)."""


class CapacityError(HypodecayError):
    """Requested expansion degree exceeds the coefficient budget."""


class SingularIntegrandError(HypodecayError):
    """psi''(f/f_inf) blew up at a quadrature node; carries the node location."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class DivergentMomentError(HypodecayError):
    """Exponential moment diverges for the given rate and state."""


class InconsistencyError(HypodecayError):
    """Two quantities that must vanish together did not."""


class UnderResolvedError(HypodecayError):
    """Quadrature doubling test failed; results are not trustworthy."""


class DomainError(HypodecayError):
    """A function handle violated its domain contract on the grid."""


class SpectralConsistencyError(HypodecayError):
    """Generator block spectrum disagrees with the predicted multiset."""


class PreconditionError(HypodecayError):
    """A theorem check was requested but its hypotheses do not hold."""


class ConfigError(HypodecayError):
    """Scenario config could not be parsed; carries a line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
