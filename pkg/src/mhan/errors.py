"""Exception types raised across the package."""


class MhanError(Exception):
    """Base class for all package errors."""


class ShapeError(MhanError, ValueError):
    """Operand shapes are incompatible."""


class EmptySequenceError(MhanError, ValueError):
    """A masked reduction was asked to pool over zero valid positions."""


class NonFiniteError(MhanError, FloatingPointError):
    """A NaN or Inf appeared in a tensor."""


class ContractError(MhanError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(MhanError, ValueError):
    """Invalid configuration value or combination."""


class DataFormatError(MhanError, ValueError):
    """Malformed input file."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line
