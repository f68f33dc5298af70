"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration file or object is malformed or inconsistent."""


class ExecutionEnvironmentError(RuntimeError):
    """The execution environment (interpreter, sandbox) is unusable."""


class BackendError(RuntimeError):
    """The text-generation backend failed after retries."""


class ScriptExhausted(BackendError):
    """A scripted mock backend ran out of replies."""


class ParseError(ValueError):
    """A backend reply could not be parsed; ``raw`` holds the offending text."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class TraceSchemaError(ValueError):
    """A trace file is malformed or written with an incompatible schema."""
