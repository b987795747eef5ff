"""Exception types shared across the package, each mapped to a CLI exit code."""


class PimsolveError(Exception):
    exit_code = 1


class ParseError(PimsolveError):
    """Malformed input file; ``line`` is 1-based when known."""

    exit_code = 1

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip())


class NonConvergenceError(PimsolveError):
    exit_code = 2


class CapacityError(PimsolveError):
    exit_code = 3
