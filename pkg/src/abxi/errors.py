"""Exception hierarchy. The CLI maps each family to an exit code."""


class AbxiError(Exception):
    exit_code = 1


class ConfigError(AbxiError, ValueError):
    exit_code = 2


class DataError(AbxiError, ValueError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyCorpusError(DataError):
    pass


class NumericalError(AbxiError, ArithmeticError):
    exit_code = 4
