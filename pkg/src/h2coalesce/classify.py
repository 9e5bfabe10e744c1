"""Reuse predicate, SAN coverage and per-connection root-cause classification."""

import logging
from typing import Dict, List, Optional, Sequence, Union

from h2coalesce.schemas.finding_schema import ConnectionSummary, FetchMode, PageFindings, ReuseVerdict
from h2coalesce.schemas.timeline_schema import SessionTimeline
from h2coalesce.schemas.trace_schema import (
    CAUSE_ORDER,
    Cause,
    Certificate,
    ConnectionSession,
    CredentialsHint,
    DnsName,
    Endpoint,
    Finding,
    Origin,
)
from h2coalesce.utils.exceptions import InvariantViolationError
from h2coalesce.utils.name_utils import normalize_dns_name

logger = logging.getLogger(__name__)


def san_covers(cert: Certificate, domain: Union[DnsName, str]) -> bool:
    """
    Return True if some SAN pattern of `cert` matches `domain`.

    A literal pattern matches by equality. A wildcard pattern ``*.rest`` matches exactly one additional leftmost
    label: never ``rest`` itself and never two labels.

    Parameters
    ----------
    cert : Certificate
        The certificate of an existing connection.
    domain : Union[DnsName, str]
        The host a request is for.

    Returns
    -------
    bool
        Whether the certificate is valid for `domain`.
    """
    name = normalize_dns_name(domain)
    text = str(name)
    for pattern in cert.san_dns_names:
        pattern = pattern.lower()
        if pattern.startswith("*."):
            base = tuple(pattern[2:].split("."))
            if len(name.labels) == len(base) + 1 and name.labels[1:] == base:
                return True
        elif pattern == text:
            return True
    return False


def reuse_verdict(
    existing: ConnectionSession,
    target: Origin,
    target_endpoint: Optional[Endpoint] = None,
) -> ReuseVerdict:
    """
    Decide whether `existing` may carry requests for `target`.

    Parameters
    ----------
    existing : ConnectionSession
        An open connection.
    target : Origin
        The origin a new request is for.
    target_endpoint : Endpoint, optional
        The endpoint `target` was observed at (the endpoint of the new connection); None assumes it matches.

    Returns
    -------
    ReuseVerdict
        EXCLUDED_421 if the connection answered 421 for the host, CERT_MISMATCH if its certificate does not cover
        the host, IP_MISMATCH if it does but the endpoints differ, REUSABLE otherwise.
    """
    if target.host in existing.excluded_domains:
        return ReuseVerdict.EXCLUDED_421
    if not san_covers(existing.certificate, target.host):
        return ReuseVerdict.CERT_MISMATCH
    if target_endpoint is not None and target_endpoint != existing.endpoint:
        return ReuseVerdict.IP_MISMATCH
    return ReuseVerdict.REUSABLE


def classify_connection(  # pylint: disable=too-many-locals,too-many-branches
    subject: ConnectionSession,
    prior_open: Sequence[ConnectionSession],
    fetch_mode: FetchMode = FetchMode.FOLLOW,
) -> Optional[Finding]:
    """
    Classify one connection against the connections open when it was established.

    Each prior connection takes at most one witness role, tried in this order:

    (a) same initial domain on a different endpoint: CRED;
    (b) same endpoint, certificate covers the domain, no 421 for it: CRED;
    (c) same endpoint, certificate does not cover the domain: CERT;
    (d) different endpoint on the same port, certificate covers the domain, no 421 for it: IP;
    (e) anything else: no witness.

    Under IGNORE_FETCH, a pair where either side has no credentials hint yields no witness from (a) or (b);
    a pair with hints yields a (b) witness only if the hints differ.

    Parameters
    ----------
    subject : ConnectionSession
        The connection to classify.
    prior_open : Sequence[ConnectionSession]
        Exactly the connections ordered before `subject` whose open interval contains its open time.
    fetch_mode : FetchMode
        Whether credentials partitioning is honored.

    Returns
    -------
    Optional[Finding]
        The finding, or None if no witness exists.

    Raises
    ------
    InvariantViolationError
        If a connection in `prior_open` is not open at the subject's open time or is not ordered before it.
    """
    domain = subject.domain
    witnesses: Dict[Cause, List[ConnectionSession]] = {}
    flagged: List[int] = []
    port_mismatch: List[int] = []

    for prior in sorted(prior_open, key=lambda s: s.order_key):
        if prior.conn_id == subject.conn_id or prior.order_key >= subject.order_key:
            raise InvariantViolationError(f"Connection {prior.conn_id} is not ordered before {subject.conn_id}")
        if not prior.is_open_at(subject.open_time):
            raise InvariantViolationError(
                f"Connection {prior.conn_id} is not open when {subject.conn_id} opens at {subject.open_time}"
            )

        same_endpoint = prior.endpoint == subject.endpoint
        covers = san_covers(prior.certificate, domain)
        reusable_for_domain = covers and domain not in prior.excluded_domains
        hints_known = CredentialsHint.UNKNOWN not in (prior.credentials_hint, subject.credentials_hint)

        cause: Optional[Cause] = None
        if prior.domain == domain and not same_endpoint:
            if fetch_mode is FetchMode.FOLLOW or hints_known:
                cause = Cause.CRED
                if reusable_for_domain and prior.endpoint.port == subject.endpoint.port:
                    flagged.append(prior.conn_id)
        elif same_endpoint and reusable_for_domain:
            if fetch_mode is FetchMode.FOLLOW or (
                hints_known and prior.credentials_hint != subject.credentials_hint
            ):
                cause = Cause.CRED
        elif same_endpoint and not covers:
            cause = Cause.CERT
        elif reusable_for_domain:
            if prior.endpoint.port == subject.endpoint.port:
                cause = Cause.IP
            else:
                port_mismatch.append(prior.conn_id)

        if cause is not None:
            witnesses.setdefault(cause, []).append(prior)

    if not witnesses:
        return None

    causes = {cause: tuple(w.conn_id for w in witnesses[cause]) for cause in CAUSE_ORDER if cause in witnesses}
    return Finding(
        conn_id=subject.conn_id,
        causes=causes,
        prev_origin_per_cause={cause: witnesses[cause][0].initial_origin for cause in causes},
        origin=subject.initial_origin,
        endpoint=subject.endpoint,
        issuer_org=subject.certificate.issuer_org,
        witness_origins={w.conn_id: w.initial_origin for ws in witnesses.values() for w in ws},
        flagged_witnesses=tuple(flagged),
        port_mismatch_witnesses=tuple(port_mismatch),
    )


def analyze_page(timeline: SessionTimeline, fetch_mode: FetchMode = FetchMode.FOLLOW) -> PageFindings:
    """
    Classify every connection of a page.

    Connections are swept in ``(open_time, conn_id)`` order while keeping the set of connections still open;
    a connection that closes at or before another opens is never its witness.

    Parameters
    ----------
    timeline : SessionTimeline
        The page's sessions.
    fetch_mode : FetchMode
        Whether credentials partitioning is honored.

    Returns
    -------
    PageFindings
        Findings in open order plus a summary of every connection.
    """
    ordered = sorted(timeline.sessions, key=lambda s: s.order_key)
    active: List[ConnectionSession] = []
    findings: List[Finding] = []

    for session in ordered:
        active = [prior for prior in active if prior.close_time > session.open_time]
        finding = classify_connection(session, active, fetch_mode)
        if finding is not None:
            findings.append(finding)
        if session.close_time > session.open_time:
            active.append(session)

    logger.debug(
        "%s: %d connections, %d redundant (%s)",
        timeline.page_url,
        len(ordered),
        len(findings),
        fetch_mode.value,
    )
    return PageFindings(
        page_url=timeline.page_url,
        model=timeline.model_label,
        fetch_mode=fetch_mode,
        connections=tuple(ConnectionSummary.of(s) for s in ordered),
        findings=tuple(findings),
    )
