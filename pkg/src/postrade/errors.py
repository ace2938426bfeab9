"""Exception hierarchy shared across the package.

The CLI maps the two top-level families onto exit codes, so every error a
user can trigger should derive from one of them.
"""


class PostradeError(Exception):
    """Base class for all package errors."""


class DataError(PostradeError):
    """Invalid or missing input data (prices, news, filings, snapshots)."""


class FetchError(DataError):
    """Remote data retrieval failed; nothing was written."""


class RateLimitError(FetchError):
    def __init__(self, message: str, retry_after: str | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class ProviderError(PostradeError):
    """Language-model provider failure (transport, parse, or schema)."""


class ConfigError(PostradeError):
    """Invalid run configuration or usage."""
