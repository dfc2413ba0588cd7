"""Exception hierarchy shared across pipeline stages.

The CLI maps each family onto a process exit code.
"""


class PipelineError(Exception):
    """Base class for every error raised by rrpipe."""


class ConfigError(PipelineError):
    """Invalid configuration or arguments (exit code 2)."""


class BackendError(PipelineError):
    """A model backend (completion or embedding service) failed (exit code 3)."""


class DataError(PipelineError):
    """Malformed or inconsistent input data (exit code 4)."""
