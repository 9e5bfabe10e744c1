"""Define the per-page session timeline produced by the HAR and NetLog ingesters."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Dict, Optional, Tuple

from h2coalesce.schemas.trace_schema import ConnectionSession


class DurationModel(Enum):
    """How close times are derived when the trace does not record them."""

    ENDLESS = "endless"
    IMMEDIATE = "immediate"


# Label used in file names and reports for NetLog timelines, whose lifetimes are measured.
MEASURED = "measured"

WARNING_KEYS: Tuple[str, ...] = (
    "ip_san_ignored",
    "certificate_mismatch",
    "non_https_request",
    "unknown_event_code",
    "truncated_log",
    "session_without_requests",
    "duplicate_binding",
    "malformed_event",
)


@dataclass
class FilterStats:  # pylint: disable=too-many-instance-attributes
    """
    Counts of requests dropped during ingestion, one counter per reason.

    The field order is the order in which reasons are checked; a request is tallied under the first reason it
    matches only.
    """

    socket_id_zero: int = 0
    missing_ip: int = 0
    inconsistent_ip: int = 0
    invalid_method: int = 0
    invalid_version: int = 0
    invalid_status: int = 0
    bad_page_ref: int = 0
    missing_certificate: int = 0
    non_h2_protocol: int = 0
    missing_request_id: int = 0
    invalid_certificate_file: int = 0

    def tally(self, reason: str, count: int = 1) -> None:
        """
        Add `count` dropped requests under `reason`.

        Raises
        ------
        KeyError
            If `reason` is not a filter reason.
        """
        if reason not in FILTER_REASONS:
            raise KeyError(reason)
        setattr(self, reason, getattr(self, reason) + count)

    @property
    def total(self) -> int:
        """Total number of dropped requests."""
        return sum(getattr(self, reason) for reason in FILTER_REASONS)

    def merge(self, other: FilterStats) -> None:
        """Add the counts of `other` into this instance."""
        for reason in FILTER_REASONS:
            self.tally(reason, getattr(other, reason))

    def as_dict(self) -> Dict[str, int]:
        """Return the counts keyed by reason, in check order."""
        return {reason: getattr(self, reason) for reason in FILTER_REASONS}


FILTER_REASONS: Tuple[str, ...] = tuple(f.name for f in fields(FilterStats))


@dataclass
class SessionTimeline:
    """
    The HTTP/2 connections of one page, ordered by ``(open_time, conn_id)``.

    Attributes
    ----------
    page_url : str
        URL of the page (HAR page title or first request URL; NetLog first request URL or file name).
    model : DurationModel, optional
        Duration model used for close times; None for NetLog timelines with measured lifetimes.
    sessions : Tuple[ConnectionSession, ...]
        The reconstructed connections.
    filters : FilterStats
        Dropped-request counters.
    warnings : Counter
        Data-quality counters keyed by the names in `WARNING_KEYS`.
    """

    page_url: str
    model: Optional[DurationModel]
    sessions: Tuple[ConnectionSession, ...] = ()
    filters: FilterStats = field(default_factory=FilterStats)
    warnings: Counter = field(default_factory=Counter)

    @property
    def model_label(self) -> str:
        """``endless``, ``immediate`` or ``measured``."""
        return self.model.value if self.model is not None else MEASURED
