"""Exception hierarchy shared by all modules."""


class PMapError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PMapError, ValueError):
    """Invalid user-supplied value; the CLI maps this to exit code 2."""


class DegeneratePolygon(ValidationError):
    pass


class EmptyInstance(ValidationError):
    pass


class InvalidAlpha(ValidationError):
    pass


class InvalidSchedule(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class PlacementFailure(PMapError):
    """Random scene generation ran out of retries."""


class MissingImage(ValidationError, KeyError):
    def __init__(self, keys):
        self.keys = sorted(keys)
        super().__init__(f"missing image key(s): {', '.join(self.keys)}")

    def __str__(self):
        return self.args[0]


class TensorFileError(ValidationError):
    pass


class BadMagic(TensorFileError):
    pass


class VersionUnsupported(TensorFileError):
    pass


class TruncatedPayload(TensorFileError):
    pass


class NonFiniteValue(TensorFileError):
    pass


class ValueOutOfRange(TensorFileError):
    pass


class IoError(PMapError, OSError):
    pass
