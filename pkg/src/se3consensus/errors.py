"""Exception types raised across the package."""


class ConsensusError(Exception):
    """Base class for all package errors."""


class NotSkew(ConsensusError, ValueError):
    pass


class OutsideInjectivityRegion(ConsensusError, ValueError):
    """Rotation lies outside the ball on which a parameterization is a diffeomorphism."""


class AntipodalRotation(OutsideInjectivityRegion):
    """Rotation angle too close to pi for the logarithm to be well defined."""


class OutsideImage(ConsensusError, ValueError):
    pass


class NearSingular(ConsensusError, ValueError):
    pass


class MissingPair(ConsensusError, KeyError):
    pass


class MissingNeighbor(ConsensusError, KeyError):
    pass


class OutOfHorizon(ConsensusError, ValueError):
    pass


class NotStronglyConnected(ConsensusError, ValueError):
    pass


class ConfigInvalid(ConsensusError, ValueError):
    """Bad trial configuration. ``key`` names the offending entry when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class NumericalDivergence(ConsensusError, ArithmeticError):
    pass


class NonPositiveValue(ConsensusError, ValueError):
    pass


class UnknownPreset(ConsensusError, KeyError):
    pass
