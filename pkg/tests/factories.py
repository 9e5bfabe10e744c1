"""Builders for sessions, HAR documents, NetLog documents and certificates shared by the tests."""

import functools
import gzip
import json
from datetime import datetime, timedelta, timezone
from ipaddress import ip_address
from typing import Any, Dict, Iterable, List, Optional, Sequence

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.x509.oid import NameOID
from hypothesis import strategies as st

from h2coalesce.schemas.timeline_schema import DurationModel, SessionTimeline
from h2coalesce.schemas.trace_schema import (
    OPEN_FOREVER,
    Certificate,
    ConnectionSession,
    CredentialsHint,
    Endpoint,
    Origin,
    Protocol,
    RequestEvent,
)
from h2coalesce.utils.name_utils import normalize_dns_name

IP_A = "192.0.2.10"
IP_B = "192.0.2.20"
IP_C = "198.51.100.30"

PAGE_START = datetime(2021, 3, 1, 10, 0, 0, tzinfo=timezone.utc)

# Worked example: four connections to one endpoint, alternating between two certificates.
SITE_DOMAIN = "a.site.test"
CDN_DOMAIN = "b.cdn.test"
WORKED_LAYOUT = [
    (1, SITE_DOMAIN, "Issuer A"),
    (2, CDN_DOMAIN, "Issuer B"),
    (3, SITE_DOMAIN, "Issuer A"),
    (4, CDN_DOMAIN, "Issuer B"),
]


def make_session(
    conn_id: int,
    domain: str,
    ip: str = IP_A,
    port: int = 443,
    sans: Optional[Sequence[str]] = None,
    issuer: str = "Test CA",
    open_time: float = 0.0,
    close_time: float = OPEN_FOREVER,
    excluded: Iterable[str] = (),
    hint: CredentialsHint = CredentialsHint.UNKNOWN,
    extra_domains: Iterable[str] = (),
) -> ConnectionSession:
    """Build a session whose first request is for `domain`; `sans` defaults to `domain` alone."""
    endpoint = Endpoint(ip=ip_address(ip), port=port)
    origin = Origin(host=normalize_dns_name(domain), port=port)
    hosts = [domain, *extra_domains]
    requests = tuple(
        RequestEvent(
            request_id=f"{conn_id}-{index}",
            page_ref="page_1",
            start_time=open_time,
            duration=0.0,
            method="GET",
            url=f"{Origin(host=normalize_dns_name(host), port=port)}/",
            protocol=Protocol.H2,
            status=200,
            socket_id=conn_id,
            server_endpoint=endpoint,
            credentials_hint=hint,
        )
        for index, host in enumerate(hosts)
    )
    return ConnectionSession(
        conn_id=conn_id,
        endpoint=endpoint,
        initial_origin=origin,
        certificate=Certificate(issuer_org=issuer, san_dns_names=tuple(sans if sans is not None else [domain])),
        open_time=open_time,
        close_time=close_time,
        requests=requests,
        excluded_domains=frozenset(normalize_dns_name(d) for d in excluded),
        credentials_hint=hint,
    )


def make_timeline(
    sessions: Iterable[ConnectionSession],
    model: Optional[DurationModel] = DurationModel.ENDLESS,
    page_url: str = "https://site.test/",
) -> SessionTimeline:
    """Wrap sessions into a timeline ordered by open time and id."""
    ordered = tuple(sorted(sessions, key=lambda s: s.order_key))
    return SessionTimeline(page_url=page_url, model=model, sessions=ordered)


def worked_example(close_times: Optional[Dict[int, float]] = None, **kwargs: Any) -> List[ConnectionSession]:
    """
    The four-connection worked example: certificates A, B, A, B on one endpoint, opened 10 ms apart.

    Expected findings with every connection open: #2 -> CERT [1]; #3 -> CERT [2], CRED [1];
    #4 -> CERT [1, 3], CRED [2].
    """
    close_times = close_times or {}
    return [
        make_session(
            conn_id,
            domain,
            issuer=issuer,
            open_time=10.0 * (conn_id - 1),
            close_time=close_times.get(conn_id, OPEN_FOREVER),
            **kwargs,
        )
        for conn_id, domain, issuer in WORKED_LAYOUT
    ]


SPEC_DOMAINS = ["a.example.com", "b.example.com", "example.com", "cdn.other.net", "x.cdn.other.net"]
SAN_CHOICES = [
    ("a.example.com",),
    ("*.example.com",),
    ("example.com", "*.example.com"),
    ("cdn.other.net",),
    ("*.other.net", "*.cdn.other.net"),
    ("b.example.com", "cdn.other.net"),
]


@st.composite
def timeline_specs(draw) -> List[dict]:
    """Up to eight connection specs over a small space of domains, endpoints and certificates."""
    count = draw(st.integers(min_value=1, max_value=8))
    return [
        {
            "domain": draw(st.sampled_from(SPEC_DOMAINS)),
            "ip": draw(st.sampled_from([IP_A, IP_B, IP_C])),
            "port": draw(st.sampled_from([443, 443, 8443])),
            "sans": draw(st.sampled_from(SAN_CHOICES)),
            "open_time": float(draw(st.integers(min_value=0, max_value=60))),
            "duration": float(draw(st.integers(min_value=0, max_value=40))),
            "excluded": draw(st.lists(st.sampled_from(SPEC_DOMAINS), max_size=2)),
            "hint": draw(st.sampled_from(list(CredentialsHint))),
        }
        for _ in range(count)
    ]


def build_sessions(specs: List[dict], endless: bool) -> List[ConnectionSession]:
    """Sessions numbered from 1 in the order given; `endless` keeps every one open to the end of the page."""
    return [
        make_session(
            index + 1,
            spec["domain"],
            ip=spec["ip"],
            port=spec["port"],
            sans=spec["sans"],
            open_time=spec["open_time"],
            close_time=OPEN_FOREVER if endless else spec["open_time"] + spec["duration"],
            excluded=spec["excluded"],
            hint=spec["hint"],
        )
        for index, spec in enumerate(specs)
    ]


def started_at(offset_ms: float) -> str:
    """ISO timestamp `offset_ms` after the page start."""
    return (PAGE_START + timedelta(milliseconds=offset_ms)).isoformat()


def har_entry(
    url: str,
    socket: Any = 1,
    ip: Any = IP_A,
    offset_ms: float = 0.0,
    duration_ms: float = 50.0,
    protocol: Any = "h2",
    status: Any = 200,
    method: Any = "GET",
    request_id: Any = "r1",
    sans: Any = None,
    issuer: str = "Test CA",
    pageref: str = "page_1",
    drop: Iterable[str] = (),
    **extra: Any,
) -> Dict[str, Any]:
    """
    Build one HAR entry in the WebPageTest custom-field layout.

    Keys named in `drop` are removed; `extra` keys are added at entry level.
    """
    host = url.split("/")[2] if "://" in url else url
    entry: Dict[str, Any] = {
        "pageref": pageref,
        "startedDateTime": started_at(offset_ms),
        "time": duration_ms,
        "_socket": socket,
        "serverIPAddress": ip,
        "_protocol": protocol,
        "_request_id": request_id,
        "_securityDetails": {"sanList": sans if sans is not None else [host.split(":")[0]], "issuer": issuer},
        "request": {"method": method, "url": url, "headers": []},
        "response": {"status": status, "headers": []},
    }
    for key in drop:
        entry.pop(key, None)
    entry.update(extra)
    return entry


def har_document(
    entries: Sequence[Dict[str, Any]],
    pages: Optional[Sequence[Dict[str, Any]]] = None,
) -> Dict[str, Any]:
    """Wrap entries into a HAR log with one declared page unless `pages` is given."""
    if pages is None:
        pages = [{"id": "page_1", "title": "https://site.test/", "startedDateTime": started_at(0)}]
    return {"log": {"version": "1.2", "creator": {"name": "tests"}, "pages": list(pages), "entries": list(entries)}}


def har_bytes(entries: Sequence[Dict[str, Any]], compress: bool = False, **kwargs: Any) -> bytes:
    """Serialize a HAR document, optionally gzip-compressed."""
    data = json.dumps(har_document(entries, **kwargs)).encode("utf-8")
    return gzip.compress(data) if compress else data


def worked_example_har(page_url: str = "https://site.test/") -> Dict[str, Any]:
    """The worked example as a HAR document, one socket per connection."""
    entries = [
        har_entry(
            f"https://{domain}/asset{socket}.js",
            socket=socket,
            offset_ms=10.0 * (socket - 1),
            request_id=f"r{socket}",
            issuer=issuer,
        )
        for socket, domain, issuer in WORKED_LAYOUT
    ]
    return har_document(entries, pages=[{"id": "page_1", "title": page_url, "startedDateTime": started_at(0)}])


@functools.lru_cache(maxsize=None)
def make_pem(
    sans: Sequence[str],
    issuer_org: Optional[str] = "Test CA",
    common_name: Optional[str] = None,
    ip_sans: Sequence[str] = (),
) -> str:
    """Return a self-signed leaf certificate in PEM form carrying the given SANs and issuer organization."""
    key = ec.generate_private_key(ec.SECP256R1())
    subject = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, common_name or (sans[0] if sans else "leaf"))])
    issuer_attrs = [x509.NameAttribute(NameOID.COMMON_NAME, "Test Root")]
    if issuer_org:
        issuer_attrs.insert(0, x509.NameAttribute(NameOID.ORGANIZATION_NAME, issuer_org))
    alt_names: List[x509.GeneralName] = [x509.DNSName(name) for name in sans]
    alt_names += [x509.IPAddress(ip_address(ip)) for ip in ip_sans]
    certificate = (
        x509.CertificateBuilder()
        .subject_name(subject)
        .issuer_name(x509.Name(issuer_attrs))
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(datetime(2021, 1, 1, tzinfo=timezone.utc))
        .not_valid_after(datetime(2022, 1, 1, tzinfo=timezone.utc))
        .add_extension(x509.SubjectAlternativeName(alt_names), critical=False)
        .sign(key, hashes.SHA256())
    )
    return certificate.public_bytes(serialization.Encoding.PEM).decode("ascii")


NETLOG_EVENT_TYPES = (
    "HTTP2_SESSION",
    "HTTP2_SESSION_INITIALIZED",
    "TCP_CONNECT",
    "SSL_CERTIFICATES_RECEIVED",
    "HTTP2_SESSION_POOL_IMPORTED_SESSION_FROM_SOCKET",
    "HTTP2_SESSION_POOL_FOUND_EXISTING_SESSION",
    "HTTP_STREAM_JOB_BOUND_TO_REQUEST",
    "URL_REQUEST_START_JOB",
    "REQUEST_ALIVE",
    "HTTP_TRANSACTION_READ_RESPONSE_HEADERS",
    "TCP_CONNECT_ATTEMPT",
)
NETLOG_SOURCE_TYPES = ("HTTP2_SESSION", "SOCKET", "URL_REQUEST", "HTTP_STREAM_JOB")
NETLOG_PHASES = {"PHASE_NONE": 0, "PHASE_BEGIN": 1, "PHASE_END": 2}


class NetlogBuilder:
    """
    Accumulate Chromium-style NetLog events with numeric codes and render the document.

    Times are absolute milliseconds written as strings, as Chromium does; the first event should be at time 0
    so that stitched times equal the times given here.
    """

    def __init__(self, base_time: int = 1_600_000_000_000) -> None:
        self.base_time = base_time
        self.events: List[Dict[str, Any]] = []
        self._next_id = 1
        self.event_codes = {name: code for code, name in enumerate(NETLOG_EVENT_TYPES, start=100)}
        self.source_codes = {name: code for code, name in enumerate(NETLOG_SOURCE_TYPES, start=1)}

    def new_id(self) -> int:
        """Allocate a source id."""
        source_id = self._next_id
        self._next_id += 1
        return source_id

    def event(
        self,
        time: float,
        source_id: int,
        source_type: str,
        event_type: str,
        phase: str = "PHASE_NONE",
        **params: Any,
    ) -> None:
        """Append one event."""
        raw: Dict[str, Any] = {
            "time": str(int(self.base_time + time)),
            "type": self.event_codes[event_type],
            "source": {"id": source_id, "type": self.source_codes[source_type]},
            "phase": NETLOG_PHASES[phase],
        }
        if params:
            raw["params"] = params
        self.events.append(raw)

    def dependency(self, source_id: int, source_type: str) -> Dict[str, Any]:
        """A ``source_dependency`` parameter."""
        return {"id": source_id, "type": self.source_codes[source_type]}

    def session(
        self,
        host: str,
        ip: str,
        pem: Optional[str],
        open_time: float,
        close_time: Optional[float] = None,
        urls: Sequence[str] = (),
        port: int = 443,
        privacy_mode: Any = None,
        status: int = 200,
        address: Optional[str] = None,
    ) -> int:
        """
        Add one HTTP/2 session with its socket and one bound URL request per URL.

        Requests start 1 ms after the session opens, 1 ms apart, and last 5 ms.

        Returns
        -------
        int
            The session source id.
        """
        session_id, socket_id = self.new_id(), self.new_id()
        self.event(open_time, socket_id, "SOCKET", "TCP_CONNECT", address=address or f"{ip}:{port}")
        if pem is not None:
            self.event(open_time, socket_id, "SOCKET", "SSL_CERTIFICATES_RECEIVED", certificates=[pem])
        begin: Dict[str, Any] = {"host": f"{host}:{port}"}
        if privacy_mode is not None:
            begin["privacy_mode"] = privacy_mode
        self.event(open_time, session_id, "HTTP2_SESSION", "HTTP2_SESSION", "PHASE_BEGIN", **begin)
        self.event(
            open_time,
            session_id,
            "HTTP2_SESSION",
            "HTTP2_SESSION_INITIALIZED",
            source_dependency=self.dependency(socket_id, "SOCKET"),
        )
        for index, url in enumerate(urls):
            self.request(url, session_id, open_time + 1 + index, status=status)
        if close_time is not None:
            self.event(close_time, session_id, "HTTP2_SESSION", "HTTP2_SESSION", "PHASE_END")
        return session_id

    def request(self, url: str, session_id: int, start: float, status: int = 200, method: str = "GET") -> int:
        """Add a URL request bound to `session_id` through a stream job; returns the request id."""
        request_id, job_id = self.new_id(), self.new_id()
        self.event(start, request_id, "URL_REQUEST", "REQUEST_ALIVE", "PHASE_BEGIN")
        self.event(start, request_id, "URL_REQUEST", "URL_REQUEST_START_JOB", url=url, method=method)
        self.event(
            start,
            job_id,
            "HTTP_STREAM_JOB",
            "HTTP2_SESSION_POOL_IMPORTED_SESSION_FROM_SOCKET",
            source_dependency=self.dependency(session_id, "HTTP2_SESSION"),
        )
        self.event(
            start,
            job_id,
            "HTTP_STREAM_JOB",
            "HTTP_STREAM_JOB_BOUND_TO_REQUEST",
            source_dependency=self.dependency(request_id, "URL_REQUEST"),
        )
        self.event(
            start + 2,
            request_id,
            "URL_REQUEST",
            "HTTP_TRANSACTION_READ_RESPONSE_HEADERS",
            headers=[f"HTTP/1.1 {status}", "content-type: text/html"],
        )
        self.event(start + 5, request_id, "URL_REQUEST", "REQUEST_ALIVE", "PHASE_END")
        return request_id

    def document(self) -> Dict[str, Any]:
        """The NetLog document."""
        return {
            "constants": {
                "logEventTypes": dict(self.event_codes),
                "logSourceType": dict(self.source_codes),
                "logEventPhase": dict(NETLOG_PHASES),
            },
            "events": list(self.events),
        }

    def to_bytes(self) -> bytes:
        """The NetLog document serialized as Chromium writes it."""
        return json.dumps(self.document()).encode("utf-8")


def worked_example_netlog() -> NetlogBuilder:
    """The worked example as a NetLog; sessions stay open to the end of the log."""
    builder = NetlogBuilder()
    pem_a = make_pem((SITE_DOMAIN,), "Issuer A")
    pem_b = make_pem((CDN_DOMAIN,), "Issuer B")
    for index, (domain, pem) in enumerate([(SITE_DOMAIN, pem_a), (CDN_DOMAIN, pem_b)] * 2):
        builder.session(domain, IP_A, pem, open_time=10.0 * index, urls=[f"https://{domain}/{index}.js"])
    return builder


def scripted_resolver_fixture(failure_slot: Optional[int] = 4, slots: int = 10) -> Dict[str, Any]:
    """
    Three resolvers answering for three domains over `slots` rounds.

    Resolvers 1 and 2 always answer ``a.test`` and ``b.test`` with a shared address; resolver 3 does so on odd
    slots only. ``c.test`` never shares an address with either. In `failure_slot`, resolver 2 fails ``c.test``.
    """
    rounds = []
    for slot in range(slots):
        answers: Dict[str, Dict[str, Any]] = {
            "9.9.9.9": {"a.test": ["203.0.113.1"], "b.test": ["203.0.113.1"], "c.test": ["198.51.100.7"]},
            "1.1.1.1": {
                "a.test": ["203.0.113.1", "203.0.113.2"],
                "b.test": ["203.0.113.2"],
                "c.test": ["198.51.100.8"],
            },
            "8.8.8.8": {
                "a.test": ["203.0.113.3"],
                "b.test": ["203.0.113.3"] if slot % 2 else ["203.0.113.4"],
                "c.test": ["198.51.100.9"],
            },
        }
        if slot == failure_slot:
            answers["1.1.1.1"]["c.test"] = "FAILED"
        rounds.append({"answers": answers})
    return {"slots": rounds, "ecs": {"8.8.8.8": True}}


RESOLVERS_TSV = "# address\tlabel\n9.9.9.9\tQuad9 CH\n1.1.1.1\tCloudflare US\n8.8.8.8\tGoogle US\n"
DOMAINS_TXT = "a.test\nB.test.\nc.test\n"
