"""Define the classification result types for one page."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Dict, Tuple

from h2coalesce.schemas.trace_schema import Cause, ConnectionSession, Endpoint, Finding, Origin, cause_counts


class FetchMode(Enum):
    """Whether classification honors the Fetch credentials partitioning of the browser."""

    FOLLOW = "follow"
    IGNORE = "ignore"


class ReuseVerdict(Enum):
    """Outcome of asking whether an existing connection may carry requests for an origin."""

    REUSABLE = "REUSABLE"
    IP_MISMATCH = "IP_MISMATCH"
    CERT_MISMATCH = "CERT_MISMATCH"
    EXCLUDED_421 = "EXCLUDED_421"


@dataclass(frozen=True)
class ConnectionSummary:
    """The per-connection facts the corpus report needs once the full session is discarded."""

    conn_id: int
    origin: Origin
    endpoint: Endpoint
    issuer_org: str
    open_time: float
    close_time: float

    @classmethod
    def of(cls, session: ConnectionSession) -> ConnectionSummary:
        """Summarize a session."""
        return cls(
            conn_id=session.conn_id,
            origin=session.initial_origin,
            endpoint=session.endpoint,
            issuer_org=session.certificate.issuer_org,
            open_time=session.open_time,
            close_time=session.close_time,
        )


@dataclass(frozen=True)
class PageFindings:
    """
    Classification result of one page.

    Attributes
    ----------
    page_url : str
        The page.
    model : str
        Duration model label of the timeline (``endless``, ``immediate`` or ``measured``).
    fetch_mode : FetchMode
        Mode the page was classified under.
    connections : Tuple[ConnectionSummary, ...]
        Every HTTP/2 connection of the page in open order.
    findings : Tuple[Finding, ...]
        One finding per redundant connection, in open order.
    """

    page_url: str
    model: str
    fetch_mode: FetchMode
    connections: Tuple[ConnectionSummary, ...]
    findings: Tuple[Finding, ...]

    @property
    def total_h2_connections(self) -> int:
        """Number of HTTP/2 connections on the page."""
        return len(self.connections)

    @property
    def redundant_count(self) -> int:
        """Number of redundant connections."""
        return len(self.findings)

    @property
    def cause_connection_counts(self) -> Dict[Cause, int]:
        """Connections per cause; a connection with two causes counts for both."""
        return cause_counts(self.findings)
