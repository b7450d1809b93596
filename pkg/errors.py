"""Exception hierarchy shared by the library, the CLI and the API.

Every error carries the process exit code the CLI uses when it reaches the top
level uncaught.
"""


class DvdError(Exception):
    """Base class for all dual-view distillation errors."""

    exit_code = 1


class ConfigError(DvdError):
    """Invalid configuration, plan, flag combination or task-kind mismatch."""

    exit_code = 1


class ShapeError(ConfigError):
    """Incompatible tensor shapes or sequence lengths."""

    def __init__(self, message: str, *shapes):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = tuple(tuple(s) for s in shapes)


class DataValidationError(DvdError):
    """Malformed data files, bad labels or stale teacher caches."""

    exit_code = 2


class FingerprintMismatchError(DataValidationError):
    """A teacher cache was built from different dataset bytes."""

    def __init__(self, expected: str, found: str):
        super().__init__(
            f"teacher cache fingerprint {found[:12]} does not match dataset fingerprint {expected[:12]}"
        )
        self.expected = expected
        self.found = found


class NumericalError(DvdError):
    """Non-finite values, NaN gradients or failed gradient checks."""

    exit_code = 3
