"""Exception hierarchy shared across the package."""


class QFlowError(Exception):
    """Base class for all package errors."""


class InvalidStateError(QFlowError, ValueError):
    pass


class LayoutError(QFlowError, ValueError):
    pass


class ContractError(QFlowError, ValueError):
    pass


class DivergenceError(QFlowError, ArithmeticError):
    pass


class NumericalError(QFlowError, ArithmeticError):
    pass


class ConfigError(QFlowError, ValueError):
    pass


class DataError(QFlowError, ValueError):
    """Bad or inconsistent input data."""


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class ModelFormatError(QFlowError):
    """Raised when a saved model cannot be loaded."""
