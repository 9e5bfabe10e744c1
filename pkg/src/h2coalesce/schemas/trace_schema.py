"""Define the core trace types: names, endpoints, certificates, requests and reconstructed sessions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from ipaddress import IPv4Address, IPv6Address
from typing import Dict, FrozenSet, Mapping, Optional, Tuple, Union

IPAddress = Union[IPv4Address, IPv6Address]

# Close time of a connection that never closes within the page; orders after every finite time.
OPEN_FOREVER: float = math.inf


@dataclass(frozen=True, order=True)
class DnsName:
    """A normalized host name: lowercase ASCII labels, rightmost label is the TLD, no trailing dot."""

    labels: Tuple[str, ...]

    def __str__(self) -> str:
        return ".".join(self.labels)


@dataclass(frozen=True)
class Endpoint:
    """Server address of a connection. Two endpoints are equal only if both IP and port are equal."""

    ip: IPAddress
    port: int

    def __str__(self) -> str:
        if self.ip.version == 6:
            return f"[{self.ip}]:{self.port}"
        return f"{self.ip}:{self.port}"


@dataclass(frozen=True, order=True)
class Origin:
    """An https origin; only these enter classification."""

    host: DnsName
    port: int = 443
    scheme: str = "https"

    def __str__(self) -> str:
        if self.port == 443:
            return f"{self.scheme}://{self.host}"
        return f"{self.scheme}://{self.host}:{self.port}"


@dataclass(frozen=True)
class Certificate:
    """
    The parts of a server certificate that connection reuse depends on.

    Attributes
    ----------
    issuer_org : str
        Issuer organization (``O``) of the leaf certificate.
    san_dns_names : Tuple[str, ...]
        Normalized SAN DNS patterns; a pattern is a literal name or ``*.`` followed by a literal name.
    subject_cn : str, optional
        Subject common name, informational only.
    """

    issuer_org: str
    san_dns_names: Tuple[str, ...]
    subject_cn: Optional[str] = None


class Protocol(Enum):
    """Application protocol of a request as declared by the trace."""

    H1 = "h1"
    H2 = "h2"
    H3 = "h3"
    OTHER = "other"


class CredentialsHint(Enum):
    """Whether a request (or a session's first request) carried credentials."""

    INCLUDED = "included"
    OMITTED = "omitted"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class RequestEvent:  # pylint: disable=too-many-instance-attributes
    """One HTTP request observed in a trace. Times are milliseconds since navigation start."""

    request_id: str
    page_ref: str
    start_time: float
    duration: float
    method: str
    url: str
    protocol: Protocol
    status: int
    socket_id: int
    server_endpoint: Optional[Endpoint] = None
    credentials_hint: CredentialsHint = CredentialsHint.UNKNOWN

    @property
    def end_time(self) -> float:
        """Start time plus total duration."""
        return self.start_time + self.duration


@dataclass(frozen=True)
class ConnectionSession:  # pylint: disable=too-many-instance-attributes
    """
    A reconstructed HTTP/2 connection.

    The connection is open on the half-open interval ``[open_time, close_time)``; a session whose close time
    equals its open time is never open and can therefore never witness another one.
    """

    conn_id: int
    endpoint: Endpoint
    initial_origin: Origin
    certificate: Certificate
    open_time: float
    close_time: float
    requests: Tuple[RequestEvent, ...]
    excluded_domains: FrozenSet[DnsName] = frozenset()
    credentials_hint: CredentialsHint = CredentialsHint.UNKNOWN

    @property
    def order_key(self) -> Tuple[float, int]:
        """Total order of sessions: open time, then connection id."""
        return (self.open_time, self.conn_id)

    @property
    def domain(self) -> DnsName:
        """Initial domain the connection was opened for."""
        return self.initial_origin.host

    def is_open_at(self, time: float) -> bool:
        """Return True if the connection is open at `time`."""
        return self.open_time <= time < self.close_time

    @property
    def closed(self) -> bool:
        """True if the connection has a finite close time."""
        return self.close_time != OPEN_FOREVER


class Cause(Enum):
    """Root cause of a redundant connection. An unknown third party is the empty cause set."""

    CERT = "CERT"
    IP = "IP"
    CRED = "CRED"


CAUSE_ORDER: Tuple[Cause, ...] = (Cause.CERT, Cause.IP, Cause.CRED)


@dataclass(frozen=True)
class Finding:  # pylint: disable=too-many-instance-attributes
    """
    Redundancy verdict for one connection.

    Attributes
    ----------
    conn_id : int
        The redundant (subject) connection.
    causes : Mapping[Cause, Tuple[int, ...]]
        Each cause at most once, with its witness connections in open order.
    prev_origin_per_cause : Mapping[Cause, Origin]
        Initial origin of the earliest witness of each cause.
    origin : Origin
        Initial origin of the subject.
    endpoint : Endpoint
        Server endpoint of the subject.
    issuer_org : str
        Issuer organization of the subject certificate.
    witness_origins : Mapping[int, Origin]
        Initial origin of every witness, keyed by connection id.
    flagged_witnesses : Tuple[int, ...]
        Same-domain CRED witnesses whose certificate also covers the subject (would otherwise be IP).
    port_mismatch_witnesses : Tuple[int, ...]
        Connections whose certificate covers the subject but whose port differs.
    """

    conn_id: int
    causes: Mapping[Cause, Tuple[int, ...]]
    prev_origin_per_cause: Mapping[Cause, Origin]
    origin: Origin
    endpoint: Endpoint
    issuer_org: str
    witness_origins: Mapping[int, Origin] = field(default_factory=dict)
    flagged_witnesses: Tuple[int, ...] = ()
    port_mismatch_witnesses: Tuple[int, ...] = ()

    def triples(self) -> FrozenSet[Tuple[int, Cause, int]]:
        """Return the (subject, cause, witness) triples of this finding."""
        return frozenset((self.conn_id, cause, witness) for cause, ws in self.causes.items() for witness in ws)


def cause_counts(findings: Tuple[Finding, ...]) -> Dict[Cause, int]:
    """Count connections per cause; a connection with two causes counts once for each."""
    counts = {cause: 0 for cause in CAUSE_ORDER}
    for finding in findings:
        for cause in finding.causes:
            counts[cause] += 1
    return counts
