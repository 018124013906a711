"""Exception hierarchy shared by all wavefm modules."""


class WaveFMError(Exception):
    """Base class; the CLI turns any of these into a one-line diagnostic."""


class MalformedHeader(WaveFMError):
    pass


class UnsupportedDatatype(WaveFMError):
    pass


class TruncatedData(WaveFMError):
    pass


class DegenerateRange(WaveFMError):
    pass


class BadDims(WaveFMError, ValueError):
    pass


class ShapeMismatch(WaveFMError, ValueError):
    pass


class DomainError(WaveFMError, ValueError):
    pass


class NonFiniteState(WaveFMError, FloatingPointError):
    pass


class EmptySet(WaveFMError, ValueError):
    pass


class TooSmall(WaveFMError, ValueError):
    pass


class NoRegions(WaveFMError, ValueError):
    pass


class UnknownVariable(WaveFMError, KeyError):
    pass


class OutOfRange(WaveFMError, ValueError):
    pass


class StaleCache(WaveFMError):
    pass


class MissingCheckpoint(WaveFMError, FileNotFoundError):
    pass


class ConfigError(WaveFMError, ValueError):
    pass
