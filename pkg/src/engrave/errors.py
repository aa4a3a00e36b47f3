"""Exception hierarchy.

The CLI maps ``ConfigError`` to exit status 2 and ``DataError`` to 3.
"""


class EngraveError(Exception):
    pass


class ConfigError(EngraveError, ValueError):
    """Invalid parameter or configuration value."""


class DataError(EngraveError, ValueError):
    """Input data is missing, malformed or violates an invariant."""


class FormatError(DataError):
    pass


class CapacityError(DataError):
    """Header dimensions disagree with the payload, or exceed what we can hold."""


class DimensionError(DataError):
    pass
