"""Exception hierarchy shared by every stage of the pipeline."""


class BsigError(Exception):
    """Base class for all library errors."""


class MalformedInputError(BsigError, ValueError):
    """A file could not be parsed; the message names the line or byte offset."""


class EmptyInputError(BsigError, ValueError):
    pass


class UnsupportedFeatureError(BsigError, ValueError):
    pass


class ParameterError(BsigError, ValueError):
    pass


class PreconditionError(BsigError, ValueError):
    pass


class DegenerateGeometryError(BsigError, ArithmeticError):
    pass


class UnmatchedKeypointError(BsigError, LookupError):
    pass


class DegenerateCurveError(BsigError, ValueError):
    pass


class SignatureSkippedError(BsigError):
    def __init__(self, keypoint: int, reason: str):
        super().__init__(f"keypoint {keypoint}: {reason}")
        self.keypoint = keypoint
        self.reason = reason
