"""Exception types shared across the package."""


class TrackEstError(Exception):
    """Base class for all errors raised by this package."""


class OutOfRange(TrackEstError):
    """Arc-length query outside the tabulated track span."""


class NearSingular(TrackEstError):
    """Euler-rate map evaluated too close to the pitch singularity."""


class BadRate(TrackEstError):
    """Time series is not uniformly sampled, or the cutoff violates Nyquist."""


class TrackTooShort(TrackEstError):
    """Ride would run past the end of the tabulated track."""


class ScenarioOutOfDomain(TrackEstError):
    """Scenario amplitudes exceed the small-motion domain."""


class MissingGroundTruth(TrackEstError):
    """Operation requires a ride record that carries ground-truth states."""


class SingularInnovation(TrackEstError):
    """Innovation covariance is not positive definite even after jitter."""


class NonPositiveDt(TrackEstError):
    """Sample interval must be positive."""


class LengthMismatch(TrackEstError):
    """Input series lengths disagree."""


class InfeasibleSpace(TrackEstError):
    """Search-space constraints contradict the bounds."""


class GridMismatch(TrackEstError):
    """Profiles are not on the same arc-length grid."""


class NonMonotoneArcLength(TrackEstError):
    """Arc-length must be strictly increasing over the resample span."""


class TooShort(TrackEstError):
    """Profile is too short for the requested wavelength band."""


class GridTooCoarse(TrackEstError):
    """Profile grid is too coarse for the requested wavelength band."""
