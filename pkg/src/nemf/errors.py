"""Exception types raised across the package."""


class NemfError(Exception):
    """Base class for all package errors."""


class ParseError(NemfError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ValidationError(NemfError, ValueError):
    pass


class ConfigError(NemfError, ValueError):
    pass


class DivergenceError(NemfError, FloatingPointError):
    def __init__(self, epoch):
        self.epoch = epoch
        super().__init__(f"non-finite factors after epoch {epoch}")
