"""Exception hierarchy shared by the library and the CLI."""


class SubspecError(Exception):
    """Base class; ``code`` is the machine-readable name emitted by the CLI."""

    code = "Error"


class IndivisibleFrequency(SubspecError, ValueError):
    code = "IndivisibleFrequency"


class BandOutOfRange(SubspecError, IndexError):
    code = "BandOutOfRange"


class ShapeMismatch(SubspecError, ValueError):
    code = "ShapeMismatch"


class InvalidConfig(SubspecError, ValueError):
    code = "InvalidConfig"


class ClipTooShort(SubspecError, ValueError):
    code = "ClipTooShort"


class InvalidSpec(SubspecError, ValueError):
    code = "InvalidSpec"


class DivergedLoss(SubspecError, FloatingPointError):
    code = "DivergedLoss"


class IndexOutOfRange(SubspecError, IndexError):
    code = "IndexOutOfRange"


class ManifestParse(SubspecError, ValueError):
    code = "ManifestParse"


class MissingBlob(SubspecError, FileNotFoundError):
    code = "MissingBlob"


class WavFormatError(SubspecError, ValueError):
    code = "WavFormatError"


class FormatError(SubspecError, ValueError):
    """A TNS4 blob is truncated or carries the wrong magic."""

    code = "FormatError"
