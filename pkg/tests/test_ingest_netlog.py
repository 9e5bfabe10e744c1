"""Tests for NetLog parsing and session stitching."""

import gzip
import json
import math
from pathlib import Path

import pytest

from h2coalesce.ingest_netlog import (
    ingest_netlog_document,
    ingest_netlog_path,
    load_event_mapping,
    parse_netlog,
    stitch_sessions,
)
from h2coalesce.schemas.trace_schema import CredentialsHint, DnsName
from h2coalesce.utils.exceptions import ConfigurationError, TraceParseError
from tests.factories import CDN_DOMAIN, IP_A, IP_B, SITE_DOMAIN, NetlogBuilder, make_pem, worked_example_netlog


def test_worked_example_is_stitched() -> None:
    timeline = ingest_netlog_document(worked_example_netlog().to_bytes(), source="worked.json")

    assert timeline.model is None
    assert timeline.model_label == "measured"
    assert timeline.page_url == f"https://{SITE_DOMAIN}/0.js"
    assert [s.open_time for s in timeline.sessions] == [0.0, 10.0, 20.0, 30.0]
    assert [str(s.domain) for s in timeline.sessions] == [SITE_DOMAIN, CDN_DOMAIN, SITE_DOMAIN, CDN_DOMAIN]
    assert [s.certificate.issuer_org for s in timeline.sessions] == ["Issuer A", "Issuer B", "Issuer A", "Issuer B"]
    assert all(math.isinf(s.close_time) for s in timeline.sessions)
    assert all(str(s.endpoint) == f"{IP_A}:443" for s in timeline.sessions)
    assert timeline.filters.total == 0


def test_requests_are_bound_to_their_session() -> None:
    builder = NetlogBuilder()
    pem = make_pem(("www.example.com", "static.example.com"), "Example CA")
    session_id = builder.session(
        "www.example.com",
        IP_A,
        pem,
        open_time=0,
        urls=["https://www.example.com/", "https://static.example.com/app.css"],
    )

    (session,) = ingest_netlog_document(builder.to_bytes()).sessions

    assert session.conn_id == session_id
    assert [r.url for r in session.requests] == ["https://www.example.com/", "https://static.example.com/app.css"]
    assert [r.start_time for r in session.requests] == [1.0, 2.0]
    assert [r.duration for r in session.requests] == [5.0, 5.0]
    assert {r.status for r in session.requests} == {200}


def test_measured_close_time() -> None:
    builder = NetlogBuilder()
    builder.session("a.test", IP_A, make_pem(("a.test",)), open_time=0, close_time=1500, urls=["https://a.test/"])

    (session,) = ingest_netlog_document(builder.to_bytes()).sessions

    assert session.close_time == 1500.0
    assert session.closed


def test_ipv6_socket_address() -> None:
    builder = NetlogBuilder()
    builder.session(
        "a.test",
        "2001:db8::1",
        make_pem(("a.test",)),
        open_time=0,
        urls=["https://a.test/"],
        address="[2001:db8::1]:443",
    )

    (session,) = ingest_netlog_document(builder.to_bytes()).sessions

    assert str(session.endpoint) == "[2001:db8::1]:443"


@pytest.mark.parametrize(
    "privacy_mode, expected",
    [
        (None, CredentialsHint.UNKNOWN),
        ("disabled", CredentialsHint.INCLUDED),
        ("enabled", CredentialsHint.OMITTED),
        ("enabled_without_client_certs", CredentialsHint.OMITTED),
        (0, CredentialsHint.INCLUDED),
        (True, CredentialsHint.OMITTED),
    ],
)
def test_privacy_mode_sets_credentials_hint(privacy_mode: object, expected: CredentialsHint) -> None:
    builder = NetlogBuilder()
    builder.session("a.test", IP_A, make_pem(("a.test",)), 0, urls=["https://a.test/"], privacy_mode=privacy_mode)

    (session,) = ingest_netlog_document(builder.to_bytes()).sessions

    assert session.credentials_hint is expected
    assert session.requests[0].credentials_hint is expected


def test_misdirected_request_excludes_host() -> None:
    builder = NetlogBuilder()
    session_id = builder.session("a.test", IP_A, make_pem(("a.test", "b.test")), 0, urls=["https://a.test/"])
    builder.request("https://b.test/", session_id, start=20, status=421)

    (session,) = ingest_netlog_document(builder.to_bytes()).sessions

    assert session.excluded_domains == frozenset({DnsName(("b", "test"))})


def test_session_without_certificate_is_dropped() -> None:
    builder = NetlogBuilder()
    builder.session("a.test", IP_A, make_pem(("a.test",)), 0, urls=["https://a.test/"])
    builder.session("b.test", IP_B, None, 5, urls=["https://b.test/", "https://b.test/x"])

    timeline = ingest_netlog_document(builder.to_bytes())

    assert [str(s.domain) for s in timeline.sessions] == ["a.test"]
    assert timeline.filters.missing_certificate == 2


def test_session_with_undecodable_certificate_is_dropped() -> None:
    builder = NetlogBuilder()
    garbled = "-----BEGIN CERTIFICATE-----\nAAAA\n-----END CERTIFICATE-----\n"
    builder.session("a.test", IP_A, garbled, 0, urls=["https://a.test/"])

    timeline = ingest_netlog_document(builder.to_bytes())

    assert timeline.sessions == ()
    assert timeline.filters.invalid_certificate_file == 1


def test_session_without_socket_address_is_dropped() -> None:
    builder = NetlogBuilder()
    session_id = builder.session("a.test", IP_A, make_pem(("a.test",)), 0, urls=["https://a.test/"])
    connect = builder.event_codes["TCP_CONNECT"]
    builder.events = [e for e in builder.events if not (e["type"] == connect and e["source"]["id"] == session_id + 1)]

    timeline = ingest_netlog_document(builder.to_bytes())

    assert timeline.sessions == ()
    assert timeline.filters.missing_ip == 1


def _connect_attempts(attempts: list) -> NetlogBuilder:
    """One session at t=10 whose socket tried each ``(address, net_error)`` of `attempts` in turn."""
    builder = NetlogBuilder()
    session_id = builder.session("a.test", IP_B, make_pem(("a.test",)), 10, urls=["https://a.test/"])
    socket_id = session_id + 1
    connect = builder.event_codes["TCP_CONNECT"]
    builder.events = [e for e in builder.events if not (e["type"] == connect and e["source"]["id"] == socket_id)]
    for index, (address, net_error) in enumerate(attempts):
        builder.event(2 * index, socket_id, "SOCKET", "TCP_CONNECT_ATTEMPT", "PHASE_BEGIN", address=address)
        end = {"net_error": net_error} if net_error is not None else {}
        builder.event(2 * index + 1, socket_id, "SOCKET", "TCP_CONNECT_ATTEMPT", "PHASE_END", **end)
    return builder


def test_failed_connect_attempt_does_not_set_endpoint() -> None:
    builder = _connect_attempts([(f"{IP_A}:443", -118), (f"{IP_B}:443", None)])

    (session,) = ingest_netlog_document(builder.to_bytes()).sessions

    assert str(session.endpoint) == f"{IP_B}:443"


def test_socket_whose_every_attempt_failed_has_no_endpoint() -> None:
    builder = _connect_attempts([(f"{IP_A}:443", -118), (f"{IP_B}:443", -102)])

    timeline = ingest_netlog_document(builder.to_bytes())

    assert timeline.sessions == ()
    assert timeline.filters.missing_ip == 1


@pytest.mark.parametrize("source_id", [None, "abc", 1.5, True, {"id": 3}])
def test_events_with_unusable_source_ids_are_skipped(source_id: object) -> None:
    builder = worked_example_netlog()
    document = builder.document()
    document["events"].append(
        {"time": str(builder.base_time + 40), "type": 100, "source": {"id": source_id, "type": 1}, "phase": 0}
    )

    timeline = ingest_netlog_document(json.dumps(document).encode())

    assert timeline.warnings["malformed_event"] == 1
    assert len(timeline.sessions) == 4


def test_session_without_requests_is_kept_and_counted() -> None:
    builder = NetlogBuilder()
    builder.session("a.test", IP_A, make_pem(("a.test",)), 0, urls=["https://a.test/"])
    builder.session("idle.test", IP_B, make_pem(("idle.test",)), 3)

    timeline = ingest_netlog_document(builder.to_bytes())

    assert [str(s.domain) for s in timeline.sessions] == ["a.test", "idle.test"]
    assert timeline.warnings["session_without_requests"] == 1


def test_first_binding_wins() -> None:
    builder = NetlogBuilder()
    first = builder.session("a.test", IP_A, make_pem(("a.test",)), 0)
    second = builder.session("a.test", IP_B, make_pem(("a.test",)), 1)
    request_id = builder.request("https://a.test/", first, start=5)
    job_id = builder.new_id()
    builder.event(
        6,
        job_id,
        "HTTP_STREAM_JOB",
        "HTTP2_SESSION_POOL_FOUND_EXISTING_SESSION",
        source_dependency=builder.dependency(second, "HTTP2_SESSION"),
    )
    builder.event(
        6,
        job_id,
        "HTTP_STREAM_JOB",
        "HTTP_STREAM_JOB_BOUND_TO_REQUEST",
        source_dependency=builder.dependency(request_id, "URL_REQUEST"),
    )

    timeline = ingest_netlog_document(builder.to_bytes())
    by_id = {s.conn_id: s for s in timeline.sessions}

    assert len(by_id[first].requests) == 1
    assert by_id[second].requests == ()
    assert timeline.warnings["duplicate_binding"] == 1


def test_unknown_event_codes_are_counted() -> None:
    builder = worked_example_netlog()
    document = builder.document()
    document["events"].append(
        {"time": str(builder.base_time + 40), "type": 9999, "source": {"id": 999, "type": 2}, "phase": 0}
    )

    timeline = ingest_netlog_document(json.dumps(document).encode())

    assert timeline.warnings["unknown_event_code"] == 1
    assert len(timeline.sessions) == 4


def test_phase_codes_default_to_mapping() -> None:
    document = worked_example_netlog().document()
    del document["constants"]["logEventPhase"]

    assert len(ingest_netlog_document(json.dumps(document).encode()).sessions) == 4


def test_truncated_log_is_salvaged() -> None:
    text = worked_example_netlog().to_bytes()
    cut = text[: len(text) - 40]

    with pytest.warns(UserWarning, match="truncated"):
        timeline = ingest_netlog_document(cut, source="cut.json")

    assert timeline.warnings["truncated_log"] == 1
    assert len(timeline.sessions) == 4


@pytest.mark.parametrize("document", [b'{"events": []}', b"[]", b"{not json", b'{"constants": {}, "events": {}}'])
def test_unusable_documents_are_rejected(document: bytes) -> None:
    with pytest.raises(TraceParseError):
        parse_netlog(document)


def test_gzip_file(tmp_path: Path) -> None:
    path = tmp_path / "log.json.gz"
    path.write_bytes(gzip.compress(worked_example_netlog().to_bytes()))

    (timeline,) = ingest_netlog_path(path)

    assert len(timeline.sessions) == 4


def test_stitch_with_explicit_page_url() -> None:
    parsed = parse_netlog(worked_example_netlog().to_bytes())
    assert stitch_sessions(parsed.events, page_url="https://site.test/").page_url == "https://site.test/"


def test_event_mapping() -> None:
    mapping = load_event_mapping()

    assert mapping.version == "chromium-87"
    assert mapping.session == "HTTP2_SESSION"
    assert "TCP_CONNECT" in mapping.socket_connect


def test_event_mapping_missing_role(tmp_path: Path) -> None:
    path = tmp_path / "events.toml"
    path.write_text('version = "x"\n[sources]\nsocket = "SOCKET"\n', encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_event_mapping(path)
