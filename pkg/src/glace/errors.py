"""Exception types. Each maps to a CLI exit code."""


class GlaceError(Exception):
    exit_code = 1


class ParseError(GlaceError):
    """Malformed input file."""

    exit_code = 2

    def __init__(self, path, lineno, message):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class ValidationError(GlaceError):
    exit_code = 2


class NumericalError(GlaceError):
    exit_code = 3
