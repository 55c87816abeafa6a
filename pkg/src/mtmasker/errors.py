"""Exception types shared across the package."""


class MtmError(Exception):
    """Base class for all package errors."""


class DimensionError(MtmError, ValueError):
    """Tensor shapes do not line up for the requested operation."""


class ParameterError(MtmError, ValueError):
    """A scalar argument is outside its valid range."""


class EmptySequenceError(MtmError, ValueError):
    """An operation received a zero-length sequence."""


class NumericError(MtmError, ArithmeticError):
    """Non-finite values where finite ones are required (e.g. diverged training)."""


class ParseError(MtmError, ValueError):
    """A data file failed to parse; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(MtmError, ValueError):
    """Records are individually well-formed but mutually inconsistent."""


class FormatError(MtmError, ValueError):
    """A file does not follow its documented layout."""


class ConfigError(MtmError, ValueError):
    """An experiment configuration is invalid; carries the field path."""

    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class ContractError(MtmError, RuntimeError):
    """A caller violated an API precondition."""
