"""Deadline handling for resolver queries issued by the DNS probe."""

import asyncio
import functools
from typing import Any, Awaitable, Callable, TypeVar

from h2coalesce.utils.exceptions import AsyncTimeoutError

T = TypeVar("T")


def async_timeout(
    seconds: float,
    label: str = "operation",
) -> Callable[[Callable[..., Awaitable[T]]], Callable[..., Awaitable[T]]]:
    """
    Bound a coroutine function by a deadline.

    The probe builds one decorated query per (resolver, domain) cell at round time, because the deadline comes
    from the run configuration rather than from the function definition.

    Parameters
    ----------
    seconds : float
        Deadline in seconds; non-positive values disable the bound.
    label : str
        Text naming the bounded call in the raised error, e.g. ``"8.8.8.8 -> example.org"``.

    Returns
    -------
    Callable[[Callable[..., Awaitable[T]]], Callable[..., Awaitable[T]]]
        A decorator raising `AsyncTimeoutError` once the deadline passes.
    """

    def decorator(func: Callable[..., Awaitable[T]]) -> Callable[..., Awaitable[T]]:
        if seconds <= 0:
            return func

        @functools.wraps(func)
        async def wrapper(*args: Any, **kwargs: Any) -> T:
            try:
                return await asyncio.wait_for(func(*args, **kwargs), timeout=seconds)
            except asyncio.TimeoutError as exc:
                raise AsyncTimeoutError(f"{label} exceeded its {seconds:g} s deadline") from exc

        return wrapper

    return decorator
