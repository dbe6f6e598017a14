"""Exception hierarchy shared by every kashinq module."""


class KashinError(Exception):
    """Base class for all kashinq errors."""

    code = "kashin-error"


class InvalidDimensionError(KashinError, ValueError):
    code = "invalid-dimension"


class UnsupportedDimensionError(KashinError, ValueError):
    code = "unsupported-dimension"


class InvalidArgumentError(KashinError, ValueError):
    code = "invalid-argument"


class InvalidInputError(KashinError, ValueError):
    code = "invalid-input"


class ShapeError(KashinError, ValueError):
    code = "shape-mismatch"


class ResourceLimitError(KashinError, MemoryError):
    code = "resource-limit"


class FormatError(KashinError):
    """Base class for on-disk / wire format problems."""

    code = "format"


class BadMagicError(FormatError):
    code = "bad-magic"


class UnsupportedVersionError(FormatError):
    code = "unsupported-version"


class ChecksumError(FormatError):
    code = "checksum-mismatch"


class TruncatedError(FormatError):
    code = "truncated"


class UnsupportedKindError(FormatError):
    code = "unsupported-kind"


class MalformedError(FormatError):
    """Structurally invalid content that is neither truncated nor mis-checksummed."""

    code = "malformed"
