"""Functions to load HAR documents, filter their requests and reconstruct per-page HTTP/2 sessions."""

import dataclasses
import json
import logging
import re
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from h2coalesce.schemas.config_schema import HarFieldMap
from h2coalesce.schemas.timeline_schema import DurationModel, FilterStats, SessionTimeline
from h2coalesce.schemas.trace_schema import (
    OPEN_FOREVER,
    Certificate,
    ConnectionSession,
    Origin,
    Protocol,
    RequestEvent,
)
from h2coalesce.utils.cert_utils import (
    CertificateDecodeError,
    DecodedCertificate,
    certificate_from_fields,
    certificate_from_pem_chain,
)
from h2coalesce.utils.exceptions import (
    ConfigurationError,
    InvalidDnsNameError,
    SessionInconsistencyError,
    TraceParseError,
    UnsupportedSchemeError,
)
from h2coalesce.utils.file_utils import decode_text, maybe_decompress
from h2coalesce.utils.name_utils import make_endpoint, origin_of, parse_ip

logger = logging.getLogger(__name__)

DEFAULT_FIELDS = HarFieldMap()
STATUS_MISDIRECTED = 421

# RFC 7230 token characters
_METHOD_RE = re.compile(r"^[!#$%&'*+\-.^_`|~0-9A-Za-z]+$")

_H2_VERSIONS = {"h2", "http/2", "http/2.0", "http2", "spdy/3.1"}
_H1_VERSIONS = {"h1", "http/1", "http/1.0", "http/1.1", "http/0.9"}


@dataclass(frozen=True)
class CertificateMaterial:
    """Certificate data found on a HAR entry, not yet decoded."""

    san_list: Optional[Sequence[str]] = None
    issuer_org: Optional[str] = None
    pem_chain: Optional[Union[str, Sequence[str]]] = None


@dataclass(frozen=True)
class HarPage:
    """A page declared in ``log.pages`` (or the implicit page of a document that declares none)."""

    page_id: str
    url: str
    started: Optional[datetime]


@dataclass(frozen=True)
class HarEntry:  # pylint: disable=too-many-instance-attributes
    """One ``log.entries`` element with the fields ingestion needs already located."""

    index: int
    page_ref: str
    page_declared: bool
    page_start: Optional[datetime]
    started: datetime
    data: Mapping[str, Any]
    certificate_material: Optional[CertificateMaterial]


@dataclass(frozen=True)
class HarDocument:
    """A loaded HAR file: its pages and entries in document order."""

    source: str
    pages: Tuple[HarPage, ...]
    entries: Tuple[HarEntry, ...]

    def entries_by_page(self) -> List[Tuple[HarPage, List[HarEntry]]]:
        """
        Group entries by page, in page declaration order.

        Entries whose ``pageref`` names no declared page go with the first page, where the filter drops them.
        """
        groups: Dict[str, List[HarEntry]] = {page.page_id: [] for page in self.pages}
        first = self.pages[0].page_id
        for entry in self.entries:
            key = entry.page_ref if entry.page_declared and entry.page_ref in groups else first
            groups[key].append(entry)
        return [(page, groups[page.page_id]) for page in self.pages]


@dataclass(frozen=True)
class KeptRequest:
    """A request that passed every filter, with its decoded origin and certificate."""

    event: RequestEvent
    origin: Origin
    certificate: Certificate
    ignored_ip_sans: int = 0
    index: int = 0


def load_har(document: bytes, source: str = "<memory>", fields: Optional[HarFieldMap] = None) -> HarDocument:
    """
    Parse a HAR 1.2 document, optionally gzip-compressed.

    Parameters
    ----------
    document : bytes
        The raw file content.
    source : str
        Name used in errors and log lines.
    fields : HarFieldMap, optional
        Where custom fields live; the defaults cover WebPageTest / HTTP Archive and DevTools exports.

    Returns
    -------
    HarDocument
        Pages and entries in document order, with certificate data located per entry.

    Raises
    ------
    TraceParseError
        If the document is not JSON, has no ``log.entries`` array, or an entry lacks a parseable start time.
    """
    fields = fields or DEFAULT_FIELDS
    try:
        text = decode_text(maybe_decompress(document))
    except (OSError, EOFError) as exc:
        raise TraceParseError(source, f"corrupt gzip stream ({exc})") from exc
    except UnicodeDecodeError as exc:
        raise TraceParseError(source, "not UTF-8 text", offset=exc.start) from exc

    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise TraceParseError(source, f"malformed JSON ({exc.msg})", offset=offset) from exc

    log = data.get("log") if isinstance(data, dict) else None
    if not isinstance(log, dict) or not isinstance(log.get("entries"), list):
        raise TraceParseError(source, "not a HAR document (no log.entries array)")

    pages = _load_pages(log.get("pages") or [], fields)
    declared = {page.page_id: page for page in pages}

    entries: List[HarEntry] = []
    for index, raw in enumerate(log["entries"]):
        if not isinstance(raw, dict):
            raise TraceParseError(source, f"entry {index} is not an object")
        started = _parse_time(raw.get("startedDateTime"))
        if started is None:
            raise TraceParseError(source, f"entry {index} has no parseable startedDateTime")

        page_ref = str(raw.get("pageref") or "")
        page = declared.get(page_ref)
        entries.append(
            HarEntry(
                index=index,
                page_ref=page_ref,
                page_declared=page is not None or not declared,
                page_start=page.started if page else None,
                started=started,
                data=raw,
                certificate_material=_certificate_material(raw, fields),
            )
        )

    if not entries:
        warnings.warn(f"{source}: HAR document has no entries", UserWarning)

    if not pages:
        first_url = str(entries[0].data.get("request", {}).get("url", "")) if entries else ""
        pages = [HarPage(page_id="", url=first_url or source, started=None)]

    logger.info("Loaded %d HAR entries on %d page(s) from %s", len(entries), len(pages), source)
    return HarDocument(source=source, pages=tuple(pages), entries=tuple(entries))


def filter_requests(
    entries: Iterable[HarEntry],
    fields: Optional[HarFieldMap] = None,
) -> Tuple[List[KeptRequest], FilterStats]:
    """
    Drop the requests that cannot take part in HTTP/2 connection analysis.

    Reasons are checked in the field order of `FilterStats`; a dropped request is tallied under the first reason
    it matches. Responses with status 421 are kept.

    Parameters
    ----------
    entries : Iterable[HarEntry]
        Entries from `load_har`.
    fields : HarFieldMap, optional
        Field map used to read custom fields.

    Returns
    -------
    Tuple[List[KeptRequest], FilterStats]
        The kept requests in entry order and the drop counters.
    """
    fields = fields or DEFAULT_FIELDS
    entries = list(entries)
    stats = FilterStats()

    origins: Dict[str, datetime] = {}
    for entry in entries:
        if entry.page_declared:
            candidates = [entry.started] + ([entry.page_start] if entry.page_start else [])
            earliest = min(candidates)
            origins[entry.page_ref] = min(origins.get(entry.page_ref, earliest), earliest)

    kept: List[KeptRequest] = []
    for entry in entries:
        reason, request = _check_entry(entry, fields, origins)
        if reason is not None:
            logger.debug("Dropping HAR entry %d: %s", entry.index, reason)
            stats.tally(reason)
            continue
        assert request is not None
        kept.append(request)
    return kept, stats


def reconstruct_sessions(
    kept: Sequence[KeptRequest],
    model: DurationModel,
    page_url: str = "",
    filters: Optional[FilterStats] = None,
) -> SessionTimeline:
    """
    Build one HTTP/2 session per socket id.

    The session opens at its first request and takes that request's origin and certificate. Under IMMEDIATE it
    closes at the end of its last request; under ENDLESS it never closes within the page.

    Parameters
    ----------
    kept : Sequence[KeptRequest]
        Requests from `filter_requests`.
    model : DurationModel
        How close times are derived.
    page_url : str
        URL of the page.
    filters : FilterStats, optional
        Counters from the filter step; sockets spanning several endpoints add to ``inconsistent_ip``.

    Returns
    -------
    SessionTimeline
        Sessions ordered by ``(open_time, conn_id)``.
    """
    filters = filters if filters is not None else FilterStats()
    counters: Counter = Counter()

    by_socket: Dict[int, List[KeptRequest]] = defaultdict(list)
    for request in kept:
        by_socket[request.event.socket_id].append(request)

    sessions: List[ConnectionSession] = []
    for socket_id, requests in by_socket.items():
        requests.sort(key=lambda r: (r.event.start_time, r.index))
        try:
            _check_single_endpoint(socket_id, requests)
        except SessionInconsistencyError as exc:
            logger.warning("Dropping session: %s", exc)
            filters.tally("inconsistent_ip", len(requests))
            continue

        first = requests[0]
        mismatches = sum(1 for r in requests[1:] if r.certificate != first.certificate)
        if mismatches:
            counters["certificate_mismatch"] += mismatches
            warnings.warn(
                f"Socket {socket_id}: {mismatches} request(s) carry a certificate differing from the first",
                UserWarning,
            )
        counters["ip_san_ignored"] += first.ignored_ip_sans

        sessions.append(
            ConnectionSession(
                conn_id=socket_id,
                endpoint=first.event.server_endpoint,
                initial_origin=first.origin,
                certificate=first.certificate,
                open_time=first.event.start_time,
                close_time=_close_time([r.event for r in requests], model),
                requests=tuple(r.event for r in requests),
                excluded_domains=frozenset(r.origin.host for r in requests if r.event.status == STATUS_MISDIRECTED),
            )
        )

    if counters["ip_san_ignored"]:
        warnings.warn(f"{page_url}: {counters['ip_san_ignored']} IP SAN entries ignored", UserWarning)

    sessions.sort(key=lambda s: s.order_key)
    return SessionTimeline(
        page_url=page_url,
        model=model,
        sessions=tuple(sessions),
        filters=filters,
        warnings=+counters,
    )


def apply_duration_model(timeline: SessionTimeline, model: DurationModel) -> SessionTimeline:
    """
    Re-derive the close times of a HAR timeline under another duration model.

    Raises
    ------
    ConfigurationError
        If the timeline carries measured lifetimes.
    """
    if timeline.model is None:
        raise ConfigurationError("Measured timelines cannot take a duration model")
    sessions = tuple(
        dataclasses.replace(session, close_time=_close_time(session.requests, model)) for session in timeline.sessions
    )
    return dataclasses.replace(timeline, model=model, sessions=sessions)


def ingest_har_document(
    document: bytes,
    model: DurationModel,
    source: str = "<memory>",
    fields: Optional[HarFieldMap] = None,
) -> List[SessionTimeline]:
    """Load, filter and reconstruct every page of a HAR document."""
    har = load_har(document, source=source, fields=fields)
    timelines = []
    for page, entries in har.entries_by_page():
        kept, stats = filter_requests(entries, fields=fields)
        timeline = reconstruct_sessions(kept, model, page_url=page.url, filters=stats)
        timeline.warnings.update(_non_https_count(entries))
        timelines.append(timeline)
        logger.debug(
            "%s: %d sessions from %d entries (%d dropped)",
            page.url,
            len(timeline.sessions),
            len(entries),
            stats.total,
        )
    return timelines


def ingest_har_path(path: Path, model: DurationModel, fields: Optional[HarFieldMap] = None) -> List[SessionTimeline]:
    """
    Ingest a HAR file, returning one timeline per page.

    Raises
    ------
    TraceParseError
        If the file is not a HAR document.
    OSError
        If the file cannot be read.
    """
    return ingest_har_document(path.read_bytes(), model, source=str(path), fields=fields)


def _load_pages(raw_pages: Sequence[Any], fields: HarFieldMap) -> List[HarPage]:
    pages = []
    for raw in raw_pages:
        if not isinstance(raw, dict) or not raw.get("id"):
            continue
        pages.append(
            HarPage(
                page_id=str(raw["id"]),
                url=str(raw.get("_URL") or raw.get("title") or raw["id"]),
                started=_parse_time(fields.lookup(raw, "page_start")),
            )
        )
    return pages


def _parse_time(value: Any) -> Optional[datetime]:
    if not isinstance(value, str) or not value:
        return None
    text = value[:-1] + "+00:00" if value.endswith("Z") else value
    try:
        parsed = datetime.fromisoformat(text)
    except ValueError:
        return None
    if parsed.tzinfo is None:
        return None
    return parsed


def _certificate_material(raw: Mapping[str, Any], fields: HarFieldMap) -> Optional[CertificateMaterial]:
    san_list = fields.lookup(raw, "san_list")
    pem_chain = fields.lookup(raw, "certificates")
    if san_list is None and pem_chain is None:
        return None
    issuer = fields.lookup(raw, "issuer_org")
    return CertificateMaterial(
        san_list=san_list,
        issuer_org=str(issuer) if issuer is not None else None,
        pem_chain=pem_chain,
    )


def _check_entry(  # pylint: disable=too-many-return-statements
    entry: HarEntry,
    fields: HarFieldMap,
    origins: Mapping[str, datetime],
) -> Tuple[Optional[str], Optional[KeptRequest]]:
    data = entry.data
    request = data.get("request") or {}
    response = data.get("response") or {}

    socket_id = _as_int(fields.lookup(data, "socket_id"))
    if not socket_id:
        return "socket_id_zero", None

    raw_ips = list(fields.values(data, "server_ip"))
    if not raw_ips:
        return "missing_ip", None
    try:
        ips = {parse_ip(str(ip)) for ip in raw_ips}
    except ValueError:
        return "inconsistent_ip", None
    if len(ips) != 1:
        return "inconsistent_ip", None

    method = request.get("method")
    if not isinstance(method, str) or not _METHOD_RE.match(method):
        return "invalid_method", None

    protocol = _protocol_of(fields.lookup(data, "protocol"))
    if protocol is None:
        return "invalid_version", None

    status = response.get("status")
    if isinstance(status, bool) or not isinstance(status, int) or not 100 <= status <= 599:
        return "invalid_status", None

    if not entry.page_declared:
        return "bad_page_ref", None

    url = str(request.get("url") or "")
    try:
        origin = origin_of(url)
    except (UnsupportedSchemeError, InvalidDnsNameError):
        origin = None
    if origin is None or entry.certificate_material is None:
        return "missing_certificate", None

    if protocol is not Protocol.H2:
        return "non_h2_protocol", None

    request_id = fields.lookup(data, "request_id")
    if request_id is None:
        return "missing_request_id", None

    try:
        decoded = _decode_certificate(entry.certificate_material)
    except CertificateDecodeError as exc:
        logger.debug("Entry %d: %s", entry.index, exc)
        return "invalid_certificate_file", None

    port = _as_int(fields.lookup(data, "server_port")) or origin.port
    try:
        endpoint = make_endpoint(ips.pop(), port)
    except ValueError:
        return "inconsistent_ip", None

    started_ms = (entry.started - origins[entry.page_ref]).total_seconds() * 1000.0
    duration = data.get("time")
    duration_ms = float(duration) if isinstance(duration, (int, float)) and not isinstance(duration, bool) else 0.0

    event = RequestEvent(
        request_id=str(request_id),
        page_ref=entry.page_ref,
        start_time=max(0.0, started_ms),
        duration=max(0.0, duration_ms),
        method=method,
        url=url,
        protocol=protocol,
        status=status,
        socket_id=socket_id,
        server_endpoint=endpoint,
    )
    return None, KeptRequest(
        event=event,
        origin=origin,
        certificate=decoded.certificate,
        ignored_ip_sans=decoded.ignored_ip_sans,
        index=entry.index,
    )


def _decode_certificate(material: CertificateMaterial) -> DecodedCertificate:
    if material.san_list is not None:
        if isinstance(material.san_list, str) or not isinstance(material.san_list, Sequence):
            raise CertificateDecodeError("SAN list is not a list")
        return certificate_from_fields([str(name) for name in material.san_list], material.issuer_org)
    return certificate_from_pem_chain(material.pem_chain)


def _protocol_of(value: Any) -> Optional[Protocol]:
    if not isinstance(value, str):
        return None
    token = value.strip().lower()
    if token in _H2_VERSIONS:
        return Protocol.H2
    if token in _H1_VERSIONS:
        return Protocol.H1
    if token.startswith(("h3", "http/3")) or "quic" in token:
        return Protocol.H3
    return None


def _as_int(value: Any) -> Optional[int]:
    if isinstance(value, bool):
        return None
    try:
        return int(value)
    except (TypeError, ValueError):
        return None


def _check_single_endpoint(socket_id: int, requests: Sequence[KeptRequest]) -> None:
    endpoints = {r.event.server_endpoint for r in requests}
    if len(endpoints) > 1:
        raise SessionInconsistencyError(socket_id, endpoints)


def _close_time(requests: Sequence[RequestEvent], model: DurationModel) -> float:
    if model is DurationModel.ENDLESS:
        return OPEN_FOREVER
    return max(r.end_time for r in requests)


def _non_https_count(entries: Iterable[HarEntry]) -> Counter:
    count = sum(
        1
        for entry in entries
        if not str((entry.data.get("request") or {}).get("url", "")).lower().startswith("https:")
    )
    return Counter({"non_https_request": count}) if count else Counter()
