"""Exception hierarchy. Every error carries a short machine-readable ``code``."""


class GhostfreeError(Exception):
    code = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class MissingFileError(GhostfreeError):
    code = "missing-file"


class UnsupportedFormatError(GhostfreeError):
    code = "unsupported-format"


class CorruptHeaderError(GhostfreeError):
    code = "corrupt-header"


class InvalidDataError(GhostfreeError):
    code = "invalid-data"


class UnwritablePathError(GhostfreeError):
    code = "unwritable-path"


class DimensionMismatchError(GhostfreeError):
    code = "dimension-mismatch"


class ConfigError(GhostfreeError):
    code = "invalid-config"


class DivergenceError(GhostfreeError):
    code = "divergence"

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step
