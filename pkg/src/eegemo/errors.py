"""Typed errors raised by the pipeline.

Every error carries the process exit code the CLI maps it to:
0 success, 1 I/O, 2 validation/format, 3 numeric failure.
"""


class EmoError(Exception):
    exit_code = 2


class IoError(EmoError, OSError):
    exit_code = 1


class FormatError(EmoError, ValueError):
    pass


class UnsupportedLayout(FormatError):
    pass


class UnsupportedDtype(FormatError):
    pass


class ShapeError(EmoError, ValueError):
    pass


class InvalidLabel(EmoError, ValueError):
    pass


class InvalidArg(EmoError, ValueError):
    pass


class ConfigError(EmoError, ValueError):
    pass


class TooFewSamples(EmoError, ValueError):
    pass


class StateError(EmoError, RuntimeError):
    pass


class NumericError(EmoError, ArithmeticError):
    exit_code = 3
