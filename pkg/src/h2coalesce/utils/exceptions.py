"""Custom exceptions for the h2coalesce package."""

import functools
import logging
from typing import Any, Callable, Optional, TypeVar

import click

logger = logging.getLogger(__name__)

T = TypeVar("T")


class InvalidDnsNameError(ValueError):
    """
    Exception raised when a host name cannot be normalized.

    Parameters
    ----------
    raw : str
        The offending input.
    reason : str
        Which rule the input violates.
    """

    def __init__(self, raw: str, reason: str) -> None:
        self.raw = raw
        super().__init__(f"Invalid DNS name {raw!r}: {reason}")


class UnsupportedSchemeError(ValueError):
    """Exception raised when a URL does not use the https scheme."""

    def __init__(self, url: str) -> None:
        self.url = url
        super().__init__(f"Unsupported scheme in {url!r}: only https origins can be classified")


class TraceParseError(ValueError):
    """
    Exception raised when a HAR or NetLog document cannot be parsed.

    Parameters
    ----------
    source : str
        File name (or a placeholder for in-memory documents).
    message : str
        What went wrong.
    offset : int, optional
        Byte offset of the failure inside the (decompressed) document, if known.
    """

    def __init__(self, source: str, message: str, offset: Optional[int] = None) -> None:
        self.source = source
        self.offset = offset
        where = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{source}: {message}{where}")


class SessionInconsistencyError(ValueError):
    """Exception raised when the requests of one socket disagree on their server endpoint."""

    def __init__(self, socket_id: int, endpoints: Any) -> None:
        self.socket_id = socket_id
        super().__init__(f"Socket {socket_id} spans several server endpoints: {sorted(map(str, endpoints))}")


class InvariantViolationError(RuntimeError):
    """Exception raised when an internal precondition of the classifier does not hold."""


class ConfigurationError(ValueError):
    """Exception raised for contradictory or incomplete run configuration."""


class MappingLoadError(ValueError):
    """
    Exception raised when a tab-separated mapping or list file is malformed.

    Parameters
    ----------
    path : str
        The file being read.
    line_number : int
        1-based line number of the bad line.
    message : str
        What is wrong with that line.
    """

    def __init__(self, path: str, line_number: int, message: str) -> None:
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


class UnknownDomainError(ValueError):
    """Exception raised when an overlap is requested for a domain no snapshot contains."""

    def __init__(self, domain: str) -> None:
        super().__init__(f"Domain {domain!r} was not probed")


class AsyncTimeoutError(Exception):
    """
    Exception raised when an async operation exceeds its timeout limit.

    This exception is used by the `async_timeout` decorator to signal that the wrapped
    asynchronous function has exceeded the specified time limit for execution.
    """


OPERATIONAL_ERRORS = (
    ConfigurationError,
    MappingLoadError,
    TraceParseError,
    InvalidDnsNameError,
    UnknownDomainError,
    OSError,
)


def handle_exceptions() -> Callable[[Callable[..., T]], Callable[..., T]]:
    """
    Turn operational errors raised by a CLI command into a clean non-zero exit.

    Returns
    -------
    Callable[[Callable[..., T]], Callable[..., T]]
        A decorator that re-raises the known operational errors as `click.ClickException`,
        which click reports on stderr with exit status 1.
    """

    def decorator(func: Callable[..., T]) -> Callable[..., T]:
        @functools.wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> T:
            try:
                return func(*args, **kwargs)
            except OPERATIONAL_ERRORS as exc:
                logger.debug("Command failed", exc_info=True)
                raise click.ClickException(str(exc)) from exc

        return wrapper

    return decorator
