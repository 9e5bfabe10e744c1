"""This module contains the schemas for the h2coalesce package."""

from h2coalesce.schemas.finding_schema import ConnectionSummary, FetchMode, PageFindings, ReuseVerdict
from h2coalesce.schemas.timeline_schema import DurationModel, FilterStats, SessionTimeline
from h2coalesce.schemas.trace_schema import (
    Cause,
    Certificate,
    ConnectionSession,
    CredentialsHint,
    DnsName,
    Endpoint,
    Finding,
    Origin,
    Protocol,
    RequestEvent,
)

__all__ = [
    "ConnectionSummary",
    "FetchMode",
    "PageFindings",
    "ReuseVerdict",
    "DurationModel",
    "FilterStats",
    "SessionTimeline",
    "Cause",
    "Certificate",
    "ConnectionSession",
    "CredentialsHint",
    "DnsName",
    "Endpoint",
    "Finding",
    "Origin",
    "Protocol",
    "RequestEvent",
]
