"""Exception and warning types raised across the package."""


class MMResetError(Exception):
    """Base class for all package errors."""


class ConfigError(MMResetError, ValueError):
    """Invalid or unreadable configuration."""


class CapacityError(MMResetError):
    """Requested Hilbert space exceeds the configured state budget."""


class OutOfBand(MMResetError, ValueError):
    """Frequency lies outside the open passband of the chain."""


class SidebandTruncation(MMResetError):
    """Retained sidebands do not carry enough of the total weight."""


class ToleranceNotMet(MMResetError):
    """Integrator could not reach the requested local error."""


class FrameAliasing(MMResetError, ValueError):
    """Drive is sampled too coarsely for the rotating-frame dynamics."""


class DomainError(MMResetError, ValueError):
    """Input outside the mathematical domain of a formula."""


class SingularDetuning(DomainError):
    """Detuning hits a pole of a perturbative expression."""


class NoCrossing(MMResetError):
    """The waveform never traverses the requested frequency."""


class FitDiverged(MMResetError):
    """Least-squares fit finished with an unacceptable residual."""


class SingularMatrix(MMResetError, ValueError):
    """Matrix cannot be inverted."""


class SingularCovariance(SingularMatrix):
    """Shot covariance is not positive definite."""


class NegativePopulationWarning(UserWarning):
    """Confusion-corrected populations contain negative entries."""
