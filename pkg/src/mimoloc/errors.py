"""Exception types shared across the package."""


class ConfigError(Exception):
    """Scenario file could not be parsed or failed validation."""


class ObservationWindowError(ValueError):
    """Target delay would place (part of) the echo outside the window."""


class NoiseCovarianceError(ValueError):
    """Noise-plus-clutter covariance is not Hermitian positive definite."""


class BandwidthError(ValueError):
    """Requested waveform set cannot meet the orthogonality bound
    at the given time-bandwidth product."""


class CoincidentDelayError(ValueError):
    """Two candidate locations share a propagation delay on some path,
    so their reflection coefficients are not jointly identifiable."""
