"""Functions to parse Chromium NetLog documents and stitch their events into measured HTTP/2 sessions."""

import functools
import json
import logging
import re
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Set, Tuple, Union

from h2coalesce.config import NETLOG_EVENTS_FILE
from h2coalesce.schemas.timeline_schema import FilterStats, SessionTimeline
from h2coalesce.schemas.trace_schema import (
    OPEN_FOREVER,
    ConnectionSession,
    CredentialsHint,
    DnsName,
    Endpoint,
    Origin,
    Protocol,
    RequestEvent,
)
from h2coalesce.utils.cert_utils import CertificateDecodeError, DecodedCertificate, certificate_from_pem_chain
from h2coalesce.utils.exceptions import (
    ConfigurationError,
    InvalidDnsNameError,
    TraceParseError,
    UnsupportedSchemeError,
)
from h2coalesce.utils.file_utils import decode_text, maybe_decompress
from h2coalesce.utils.name_utils import origin_of, parse_endpoint

try:
    import tomllib  # type: ignore[import]
except ImportError:
    import tomli as tomllib

logger = logging.getLogger(__name__)

_STATUS_RE = re.compile(r"^(?:HTTP/\S+\s+|:status:\s*)(\d{3})\b")


class Phase(Enum):
    """Phase of a NetLog event."""

    BEGIN = "begin"
    END = "end"
    NONE = "none"


@dataclass(frozen=True)
class EventRecord:
    """One decoded NetLog event. Times are milliseconds since the earliest event of the log."""

    source_id: int
    source_type: str
    event_type: str
    phase: Phase
    time: float
    params: Mapping[str, Any] = field(default_factory=dict)

    @property
    def dependency(self) -> Optional[int]:
        """Id of the source named by ``params.source_dependency``, if any."""
        dep = self.params.get("source_dependency")
        if isinstance(dep, Mapping) and isinstance(dep.get("id"), int):
            return dep["id"]
        return None


@dataclass(frozen=True)
class NetlogEventMapping:  # pylint: disable=too-many-instance-attributes
    """Event and source names used for stitching, loaded from ``netlog_events.toml``."""

    version: str
    session_source: str
    socket_source: str
    url_request_source: str
    stream_job_source: str
    session: str
    session_initialized: str
    socket_connect: Tuple[str, ...]
    tls_certificates: str
    job_to_session: Tuple[str, ...]
    job_to_request: Tuple[str, ...]
    request_to_job: Tuple[str, ...]
    request_start: Tuple[str, ...]
    request_alive: str
    response_headers: Tuple[str, ...]
    phases: Mapping[str, int]


@dataclass
class NetlogDocument:
    """
    A parsed NetLog.

    Attributes
    ----------
    source : str
        File name or placeholder.
    events : List[EventRecord]
        Decoded events ordered by time (stable within equal times).
    counters : Counter
        ``unknown_event_code``, ``truncated_log`` and ``malformed_event`` counts.
    """

    source: str
    events: List[EventRecord]
    counters: Counter = field(default_factory=Counter)


@functools.lru_cache(maxsize=8)
def load_event_mapping(path: Path = NETLOG_EVENTS_FILE) -> NetlogEventMapping:
    """
    Load the stitching roles from a mapping file.

    Parameters
    ----------
    path : Path
        The TOML file; defaults to the shipped ``netlog_events.toml`` (overridable by environment).

    Returns
    -------
    NetlogEventMapping
        The roles.

    Raises
    ------
    ConfigurationError
        If the file is missing, is not valid TOML, or lacks a role.
    """
    try:
        with Path(path).open("rb") as f:
            data = tomllib.load(f)
    except OSError as exc:
        raise ConfigurationError(f"Cannot read NetLog event mapping {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"Invalid TOML in {path}: {exc}") from exc

    try:
        sources, events = data["sources"], data["events"]
        return NetlogEventMapping(
            version=str(data["version"]),
            session_source=sources["http2_session"],
            socket_source=sources["socket"],
            url_request_source=sources["url_request"],
            stream_job_source=sources["stream_job"],
            session=events["session"],
            session_initialized=events["session_initialized"],
            socket_connect=_names(events["socket_connect"]),
            tls_certificates=events["tls_certificates"],
            job_to_session=_names(events["job_to_session"]),
            job_to_request=_names(events["job_to_request"]),
            request_to_job=_names(events["request_to_job"]),
            request_start=_names(events["request_start"]),
            request_alive=events["request_alive"],
            response_headers=_names(events["response_headers"]),
            phases=dict(data.get("phases", {"PHASE_NONE": 0, "PHASE_BEGIN": 1, "PHASE_END": 2})),
        )
    except KeyError as exc:
        raise ConfigurationError(f"NetLog event mapping {path} lacks {exc}") from exc


def _names(value: Union[str, List[str]]) -> Tuple[str, ...]:
    return (value,) if isinstance(value, str) else tuple(value)


def parse_netlog(
    document: bytes,
    source: str = "<memory>",
    mapping: Optional[NetlogEventMapping] = None,
) -> NetlogDocument:
    """
    Decode a NetLog JSON document, resolving numeric codes through its constants section.

    A log cut off inside its events array is salvaged up to the last complete event, with a warning.

    Parameters
    ----------
    document : bytes
        The raw file content, optionally gzip-compressed.
    source : str
        Name used in errors and log lines.
    mapping : NetlogEventMapping, optional
        Supplies the default phase codes; defaults to the shipped mapping.

    Returns
    -------
    NetlogDocument
        The decoded events and the unknown-code / truncation counters.

    Raises
    ------
    TraceParseError
        If the document has no constants section or cannot be decoded at all.
    """
    mapping = mapping or load_event_mapping()
    try:
        text = decode_text(maybe_decompress(document))
    except (OSError, EOFError) as exc:
        raise TraceParseError(source, f"corrupt gzip stream ({exc})") from exc
    except UnicodeDecodeError as exc:
        raise TraceParseError(source, "not UTF-8 text", offset=exc.start) from exc

    counters: Counter = Counter()
    try:
        data = json.loads(text)
        if not isinstance(data, dict):
            raise TraceParseError(source, "top level is not an object")
        constants, raw_events = data.get("constants"), data.get("events", [])
    except json.JSONDecodeError as exc:
        constants, raw_events = _salvage(text, source, exc)
        counters["truncated_log"] += 1
        warnings.warn(f"{source}: truncated NetLog salvaged ({len(raw_events)} complete events)", UserWarning)

    if not isinstance(constants, dict):
        raise TraceParseError(source, "no constants section")
    if not isinstance(raw_events, list):
        raise TraceParseError(source, "events is not an array")

    event_names = _reverse(constants.get("logEventTypes"))
    source_names = _reverse(constants.get("logSourceType"))
    phase_names = _reverse(constants.get("logEventPhase")) or {code: name for name, code in mapping.phases.items()}

    decoded: List[Tuple[float, int, int, Dict[str, Any]]] = []
    for index, raw in enumerate(raw_events):
        source_id = _source_id(raw)
        time = _as_float(raw.get("time")) if source_id is not None else None
        if time is None:
            logger.debug("%s: skipping malformed event %d", source, index)
            counters["malformed_event"] += 1
            continue
        decoded.append((time, source_id, index, raw))

    base = min((time for time, _, _, _ in decoded), default=0.0)
    events = []
    for time, source_id, _, raw in sorted(decoded, key=lambda item: (item[0], item[2])):
        events.append(
            EventRecord(
                source_id=source_id,
                source_type=_lookup(source_names, raw["source"].get("type"), counters),
                event_type=_lookup(event_names, raw.get("type"), counters),
                phase=_phase(phase_names.get(raw.get("phase"), "PHASE_NONE")),
                time=time - base,
                params=raw.get("params") if isinstance(raw.get("params"), dict) else {},
            )
        )

    if counters["unknown_event_code"]:
        logger.warning("%s: %d event(s) with unmapped codes", source, counters["unknown_event_code"])
    logger.info("Decoded %d NetLog events from %s", len(events), source)
    return NetlogDocument(source=source, events=events, counters=counters)


def _salvage(text: str, source: str, error: json.JSONDecodeError) -> Tuple[Any, List[Any]]:
    decoder = json.JSONDecoder()
    offset_of = functools.partial(_byte_offset, text)

    constants_key = text.find('"constants"')
    events_key = text.find('"events"')
    if constants_key < 0 or events_key < 0:
        raise TraceParseError(source, f"malformed JSON ({error.msg})", offset=offset_of(error.pos)) from error

    try:
        constants, _ = decoder.raw_decode(text, _value_start(text, constants_key + len('"constants"')))
    except (json.JSONDecodeError, ValueError) as exc:
        raise TraceParseError(source, f"malformed JSON ({error.msg})", offset=offset_of(error.pos)) from exc

    pos = _value_start(text, events_key + len('"events"'))
    if pos >= len(text) or text[pos] != "[":
        raise TraceParseError(source, "events is not an array", offset=offset_of(pos))
    pos += 1

    events: List[Any] = []
    while True:
        while pos < len(text) and text[pos] in " \t\r\n,":
            pos += 1
        if pos >= len(text) or text[pos] == "]":
            break
        try:
            event, pos = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            break
        events.append(event)
    return constants, events


def _value_start(text: str, pos: int) -> int:
    pos = text.index(":", pos) + 1
    while pos < len(text) and text[pos] in " \t\r\n":
        pos += 1
    return pos


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


def _reverse(table: Any) -> Dict[int, str]:
    if not isinstance(table, dict):
        return {}
    return {code: name for name, code in table.items() if isinstance(code, int)}


def _lookup(table: Mapping[int, str], code: Any, counters: Counter) -> str:
    if isinstance(code, str) and not code.isdigit():
        return code
    try:
        number = int(code)
    except (TypeError, ValueError):
        number = -1
    name = table.get(number)
    if name is None:
        counters["unknown_event_code"] += 1
        return f"UNKNOWN_{number}"
    return name


def _phase(name: str) -> Phase:
    if name == "PHASE_BEGIN":
        return Phase.BEGIN
    if name == "PHASE_END":
        return Phase.END
    return Phase.NONE


def _as_float(value: Any) -> Optional[float]:
    if isinstance(value, bool):
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        return None


def _source_id(raw: Any) -> Optional[int]:
    source = raw.get("source") if isinstance(raw, dict) else None
    value = source.get("id") if isinstance(source, dict) else None
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    if isinstance(value, str) and value.isdecimal():
        return int(value)
    return None


@dataclass
class _SessionState:  # pylint: disable=too-many-instance-attributes
    source_id: int
    first_seen: float
    open_time: Optional[float] = None
    close_time: Optional[float] = None
    host: Optional[str] = None
    privacy_mode: Any = None
    socket_id: Optional[int] = None


@dataclass
class _RequestState:  # pylint: disable=too-many-instance-attributes
    source_id: int
    first_seen: float
    last_seen: float
    start_time: Optional[float] = None
    end_time: Optional[float] = None
    url: Optional[str] = None
    method: str = "GET"
    status: int = 0


def stitch_sessions(  # pylint: disable=too-many-locals,too-many-branches,too-many-statements
    events: Iterable[EventRecord],
    page_url: str = "",
    mapping: Optional[NetlogEventMapping] = None,
) -> SessionTimeline:
    """
    Link session, socket, stream-job and URL-request events into measured HTTP/2 sessions.

    A session's endpoint is the address of its socket's latest connect event; an attempt that ends with a
    ``net_error`` clears it. Its certificate comes from the socket's TLS certificate event. It opens and closes
    with the begin and end of the session source; a session still open at the end of the log never closes. A URL
    request belongs to the session its stream job was bound to; when a request is bound more than once, the first
    binding wins.

    Parameters
    ----------
    events : Iterable[EventRecord]
        Decoded events from `parse_netlog`.
    page_url : str
        Fallback page URL when the log has no URL request.
    mapping : NetlogEventMapping, optional
        The stitching roles; defaults to the shipped mapping.

    Returns
    -------
    SessionTimeline
        Sessions ordered by ``(open_time, conn_id)``, with no duration model. Sessions without a resolvable socket
        or certificate are dropped and their requests tallied under ``missing_ip``, ``missing_certificate`` or
        ``invalid_certificate_file``.
    """
    mapping = mapping or load_event_mapping()
    counters: Counter = Counter()
    filters = FilterStats()

    sessions: Dict[int, _SessionState] = {}
    socket_address: Dict[int, str] = {}
    socket_certs: Dict[int, Any] = {}
    requests: Dict[int, _RequestState] = {}
    job_session: Dict[int, int] = {}
    job_requests: Dict[int, List[int]] = defaultdict(list)
    request_jobs: Dict[int, List[int]] = defaultdict(list)

    for event in events:
        kind, name, params = event.source_type, event.event_type, event.params

        if kind == mapping.session_source:
            state = sessions.setdefault(event.source_id, _SessionState(event.source_id, event.time))
            if name == mapping.session and event.phase is Phase.BEGIN:
                state.open_time = event.time
                state.host = params.get("host", state.host)
                state.privacy_mode = params.get("privacy_mode", state.privacy_mode)
            elif name == mapping.session and event.phase is Phase.END:
                state.close_time = event.time
            elif name == mapping.session_initialized and event.dependency is not None:
                state.socket_id = event.dependency

        elif kind == mapping.socket_source:
            if name in mapping.socket_connect and isinstance(params.get("address"), str):
                socket_address[event.source_id] = params["address"]
            elif name in mapping.socket_connect and event.phase is Phase.END and params.get("net_error") is not None:
                socket_address.pop(event.source_id, None)
            elif name == mapping.tls_certificates and params.get("certificates"):
                socket_certs.setdefault(event.source_id, params["certificates"])

        elif kind == mapping.stream_job_source and event.dependency is not None:
            if name in mapping.job_to_session:
                job_session.setdefault(event.source_id, event.dependency)
            elif name in mapping.job_to_request:
                job_requests[event.source_id].append(event.dependency)

        elif kind == mapping.url_request_source:
            req = requests.setdefault(event.source_id, _RequestState(event.source_id, event.time, event.time))
            req.last_seen = event.time
            if name == mapping.request_alive and event.phase is Phase.BEGIN:
                req.start_time = event.time
            elif name == mapping.request_alive and event.phase is Phase.END:
                req.end_time = event.time
            elif name in mapping.request_start:
                req.url = params.get("url", req.url)
                req.method = params.get("method", req.method)
                if req.start_time is None:
                    req.start_time = event.time
            elif name in mapping.response_headers:
                req.status = _status_of(params.get("headers")) or req.status
            elif name in mapping.request_to_job and event.dependency is not None:
                request_jobs[event.source_id].append(event.dependency)

    bound = _bind_requests(job_session, job_requests, request_jobs, counters)

    timeline_sessions: List[ConnectionSession] = []
    for session_id in sorted(sessions):
        state = sessions[session_id]
        members = sorted(
            (requests[r] for r, s in bound.items() if s == session_id and r in requests),
            key=lambda r: (_request_start(r), r.source_id),
        )
        hint = _credentials_hint(state.privacy_mode)
        request_events = tuple(_request_event(r, session_id, hint) for r in members if r.url)
        counters["non_https_request"] += sum(1 for r in request_events if not r.url.lower().startswith("https:"))

        origin = _session_origin(state, request_events)
        if origin is None:
            logger.debug("Dropping session %d: no host and no request", session_id)
            filters.tally("missing_certificate", len(request_events))
            continue

        endpoint = _socket_endpoint(state, socket_address, origin)
        if endpoint is None:
            logger.debug("Dropping session %d: socket address unknown", session_id)
            filters.tally("missing_ip", len(request_events))
            continue

        chain = socket_certs.get(state.socket_id) if state.socket_id is not None else None
        if chain is None:
            logger.debug("Dropping session %d: no TLS certificate on socket %s", session_id, state.socket_id)
            filters.tally("missing_certificate", len(request_events))
            continue
        try:
            decoded: DecodedCertificate = certificate_from_pem_chain(chain)
        except CertificateDecodeError as exc:
            logger.debug("Dropping session %d: %s", session_id, exc)
            filters.tally("invalid_certificate_file", len(request_events))
            continue
        counters["ip_san_ignored"] += decoded.ignored_ip_sans

        if not request_events:
            counters["session_without_requests"] += 1

        open_time = state.open_time if state.open_time is not None else state.first_seen
        close_time = state.close_time if state.close_time is not None else OPEN_FOREVER
        timeline_sessions.append(
            ConnectionSession(
                conn_id=session_id,
                endpoint=endpoint,
                initial_origin=origin,
                certificate=decoded.certificate,
                open_time=open_time,
                close_time=max(close_time, open_time),
                requests=request_events,
                excluded_domains=frozenset(
                    host for host in (_host_or_none(r.url) for r in request_events if r.status == 421) if host
                ),
                credentials_hint=hint,
            )
        )

    if not page_url:
        urls = sorted((r for r in requests.values() if r.url), key=lambda r: (_request_start(r), r.source_id))
        page_url = urls[0].url if urls else ""

    timeline_sessions.sort(key=lambda s: s.order_key)
    return SessionTimeline(
        page_url=page_url,
        model=None,
        sessions=tuple(timeline_sessions),
        filters=filters,
        warnings=+counters,
    )


def ingest_netlog_document(
    document: bytes,
    source: str = "<memory>",
    mapping: Optional[NetlogEventMapping] = None,
) -> SessionTimeline:
    """Parse a NetLog document and stitch its sessions into one timeline."""
    parsed = parse_netlog(document, source=source, mapping=mapping)
    timeline = stitch_sessions(parsed.events, mapping=mapping)
    if not timeline.page_url:
        timeline.page_url = source
    timeline.warnings.update(parsed.counters)
    if timeline.warnings["ip_san_ignored"]:
        warnings.warn(f"{source}: {timeline.warnings['ip_san_ignored']} IP SAN entries ignored", UserWarning)
    return timeline


def ingest_netlog_path(path: Path, mapping: Optional[NetlogEventMapping] = None) -> List[SessionTimeline]:
    """
    Ingest a NetLog file; a NetLog captures one page, so the list has one element.

    Raises
    ------
    TraceParseError
        If the file is not a NetLog document.
    OSError
        If the file cannot be read.
    """
    return [ingest_netlog_document(path.read_bytes(), source=str(path), mapping=mapping)]


def _bind_requests(
    job_session: Mapping[int, int],
    job_requests: Mapping[int, List[int]],
    request_jobs: Mapping[int, List[int]],
    counters: Counter,
) -> Dict[int, int]:
    links: List[Tuple[int, int]] = []
    for job, request_ids in job_requests.items():
        links.extend((request_id, job) for request_id in request_ids)
    for request_id, jobs in request_jobs.items():
        links.extend((request_id, job) for job in jobs)

    bound: Dict[int, int] = {}
    seen: Set[Tuple[int, int]] = set()
    for request_id, job in links:
        session_id = job_session.get(job)
        if session_id is None or (request_id, session_id) in seen:
            continue
        seen.add((request_id, session_id))
        if request_id in bound:
            counters["duplicate_binding"] += 1
            continue
        bound[request_id] = session_id
    return bound


def _request_start(request: _RequestState) -> float:
    return request.start_time if request.start_time is not None else request.first_seen


def _request_event(request: _RequestState, session_id: int, hint: CredentialsHint) -> RequestEvent:
    start = _request_start(request)
    end = request.end_time if request.end_time is not None else request.last_seen
    return RequestEvent(
        request_id=str(request.source_id),
        page_ref="",
        start_time=start,
        duration=max(0.0, end - start),
        method=str(request.method),
        url=str(request.url),
        protocol=Protocol.H2,
        status=request.status,
        socket_id=session_id,
        credentials_hint=hint,
    )


def _session_origin(state: _SessionState, request_events: Tuple[RequestEvent, ...]) -> Optional[Origin]:
    candidates = []
    if isinstance(state.host, str) and state.host:
        candidates.append(f"https://{state.host}")
    candidates.extend(r.url for r in request_events)
    for url in candidates:
        try:
            return origin_of(url)
        except (UnsupportedSchemeError, InvalidDnsNameError):
            continue
    return None


def _socket_endpoint(state: _SessionState, addresses: Mapping[int, str], origin: Origin) -> Optional[Endpoint]:
    if state.socket_id is None or state.socket_id not in addresses:
        return None
    try:
        return parse_endpoint(addresses[state.socket_id], default_port=origin.port)
    except ValueError:
        return None


def _credentials_hint(privacy_mode: Any) -> CredentialsHint:
    if privacy_mode is None:
        return CredentialsHint.UNKNOWN
    if isinstance(privacy_mode, bool):
        return CredentialsHint.OMITTED if privacy_mode else CredentialsHint.INCLUDED
    if isinstance(privacy_mode, int):
        return CredentialsHint.OMITTED if privacy_mode else CredentialsHint.INCLUDED
    text = str(privacy_mode).strip().lower()
    if text in ("disabled", "privacy_mode_disabled", "false", "0"):
        return CredentialsHint.INCLUDED
    if text.startswith(("enabled", "privacy_mode_enabled")) or text in ("true", "1"):
        return CredentialsHint.OMITTED
    return CredentialsHint.UNKNOWN


def _status_of(headers: Any) -> Optional[int]:
    lines = headers if isinstance(headers, list) else [headers] if isinstance(headers, str) else []
    for line in lines:
        match = _STATUS_RE.match(str(line).strip())
        if match:
            return int(match.group(1))
    return None


def _host_or_none(url: str) -> Optional[DnsName]:
    try:
        return origin_of(url).host
    except (UnsupportedSchemeError, InvalidDnsNameError):
        return None
