"""Error types carrying the stable identifiers the CLI reports."""


class VDRError(Exception):
    """Base error. ``code`` is the machine-readable identifier, e.g. ``"shape"``
    or ``"dataset-parse:12"``."""

    exit_code = 2

    def __init__(self, code: str, detail: str = ""):
        self.code = code
        self.detail = detail
        super().__init__(f"{code}: {detail}" if detail else code)


class ValidationError(VDRError, ValueError):
    """Bad input: malformed files, out-of-range indices, inconsistent shapes."""

    exit_code = 1


class RunFailure(VDRError, RuntimeError):
    """Failure during an otherwise valid run (divergence, non-finite loss)."""

    exit_code = 2
