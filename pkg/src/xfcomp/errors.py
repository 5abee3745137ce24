"""Exception hierarchy shared by all stages."""


class XfcError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(XfcError):
    """Malformed file: bad magic, version, size, or structure."""


class DataError(XfcError):
    """Invalid data content (non-finite values, etc.)."""


class ArgumentError(XfcError):
    """Invalid argument to an in-memory operation."""


class DegenerateFieldError(XfcError):
    """Operation undefined on a field with zero value range."""


class ManifestError(XfcError):
    """Manifest is inconsistent: missing anchors, bad dims, cycles."""


class PrecisionError(XfcError):
    """Error bound too small for the value range (code overflow)."""


class FitError(XfcError):
    """Not enough samples to fit the hybrid model."""


class CorruptStreamError(XfcError):
    """Encoded stream cannot be decoded (underrun/overrun/garbage)."""


class IntegrityError(XfcError):
    """Checksum mismatch on a stored stream or weight file."""
