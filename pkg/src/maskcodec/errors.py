"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes (see cli.EXIT_CODES), so new
error types should subclass one of the three categories below.
"""


class MaskCodecError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MaskCodecError):
    """Invalid configuration: bad window/hop, wrong sample rate, bad partition."""


class ShapeError(MaskCodecError):
    """Array shape or dimensionality mismatch."""


class DataError(MaskCodecError):
    """Invalid data values: out-of-range token, corpus too small, truncated payload."""


class FormatError(MaskCodecError):
    """Malformed binary container: bad magic, unsupported version."""


class WeightsError(MaskCodecError):
    """A required weight tensor is missing or has the wrong shape."""


class UnsupportedError(MaskCodecError):
    """A requested operation is outside the supported domain (e.g. partial
    decode below the parallel block)."""
