"""Exception hierarchy shared across the package."""


class MtdplanError(Exception):
    """Base class for all package-specific errors."""


class CaseError(MtdplanError):
    """Invalid case configuration.  ``path`` points at the offending field."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class PhantomError(MtdplanError):
    """Invalid phantom geometry or dose-influence setup."""


class FormulationError(MtdplanError):
    """Inconsistent criteria or broken block structure."""


class DataError(MtdplanError):
    """Malformed plan/dose artifact on disk.  Carries an optional line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
