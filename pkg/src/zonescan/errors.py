"""Exception hierarchy shared by all pipeline stages."""


class ZonescanError(Exception):
    """Base class for every error raised by this package."""


class FormatError(ZonescanError, ValueError):
    """File does not carry the expected magic or layout."""


class CorruptionError(ZonescanError, ValueError):
    """Payload is shorter than its header claims."""


class DataError(ZonescanError, ValueError):
    """Values are present but not usable (NaN, inf, out of range)."""


class SchemaError(ZonescanError, ValueError):
    """A delimited file is missing required columns."""


class ValidationError(ZonescanError, ValueError):
    pass


class ParameterError(ZonescanError, ValueError):
    pass


class ShapeError(ZonescanError, ValueError):
    pass


class BoundsError(ZonescanError, IndexError):
    pass


class PlacementError(ZonescanError, RuntimeError):
    """A threat box could not be placed inside its zone."""


class ContainmentError(ZonescanError, ValueError):
    """A reconstruction seed is not contained in its mask."""


class NoForegroundError(ZonescanError, ValueError):
    pass


class ConfigError(ZonescanError, ValueError):
    pass


class DivergenceError(ZonescanError, FloatingPointError):
    """Training produced a non-finite loss."""


class UndefinedAUCError(ZonescanError, ValueError):
    """ROC is undefined when a class has no positives or no negatives."""
