"""Error taxonomy shared by the library and the CLI exit-code mapping."""


class ConfigurationError(ValueError):
    """Bad parameter, config key, or model/data dimension agreement."""


class DataError(ValueError):
    """Unreadable, malformed, or inconsistent input data."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required (e.g. diverged loss)."""


class StageError(RuntimeError):
    """A pipeline stage failed; wraps the original error with the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
