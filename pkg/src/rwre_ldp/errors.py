"""Exception hierarchy shared by all modules."""


class RWREError(Exception):
    """Base class for every error raised by the package."""


class NotAProbability(RWREError, ValueError):
    pass


class EllipticityViolated(RWREError, ValueError):
    pass


class DegenerateDrift(RWREError, ValueError):
    """All local drifts vanish; no direction supports regeneration."""


class RegenerationStarvation(RWREError):
    """Too many walks ran past ``cycle_cap`` steps without a new regeneration."""

    def __init__(self, message, *, starved=0, cycles_collected=0, steps_simulated=0):
        super().__init__(message)
        self.starved = starved
        self.cycles_collected = cycles_collected
        self.steps_simulated = steps_simulated


class BracketFailure(RWREError):
    pass


class NonFiniteWeight(RWREError, FloatingPointError):
    pass


class RegionRefused(RWREError):
    """Estimation requested at a tilt that is not classified inside the region."""

    def __init__(self, message, label=None):
        super().__init__(message)
        self.label = label


class LeftRegionC(RegionRefused):
    pass


class NoConvergence(RWREError):
    pass


class InsufficientRunLength(RWREError):
    pass


class PathTooShort(RWREError, ValueError):
    pass


class TooLarge(RWREError, ValueError):
    pass


class NotTransientRight(RWREError, ValueError):
    pass


class ConfigError(RWREError, ValueError):
    pass
