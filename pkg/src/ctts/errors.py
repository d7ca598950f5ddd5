"""Exception hierarchy shared by every stage."""


class CttsError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CttsError, ValueError):
    pass


class ConfigError(CttsError, ValueError):
    pass


class InputError(CttsError, ValueError):
    """Bad user input (empty or overlong text, empty phoneme sequence)."""


class StateError(CttsError, RuntimeError):
    pass


class NumericError(CttsError, ArithmeticError):
    """Non-finite values appeared during synthesis."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ModelFileError(CttsError):
    """Base class for container load/save failures."""


class FormatError(ModelFileError):
    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (at byte offset {offset})")
        self.offset = offset


class VersionError(ModelFileError):
    pass


class TruncationError(ModelFileError):
    pass


class ValidationError(ModelFileError):
    pass
