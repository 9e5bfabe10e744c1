"""Counterfactual replay of a page through an idealized HTTP/2 connection pool."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Set, Tuple

from h2coalesce.classify import san_covers
from h2coalesce.config import STREAM_LIMIT_ASSUMPTION
from h2coalesce.schemas.timeline_schema import SessionTimeline
from h2coalesce.schemas.trace_schema import Certificate, ConnectionSession, CredentialsHint, DnsName, Endpoint
from h2coalesce.utils.exceptions import ConfigurationError
from h2coalesce.utils.name_utils import origin_of

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PoolPolicy:
    """
    Reuse policy of the simulated pool.

    Attributes
    ----------
    credentials_partitioning : bool
        Keep connections with differing credentials hints apart, as the Fetch standard asks of browsers.
    reuse_requires_san : bool
        Always True; present for audit output.
    reuse_requires_endpoint : bool
        Always True; present for audit output.
    """

    credentials_partitioning: bool = True
    reuse_requires_san: bool = True
    reuse_requires_endpoint: bool = True

    def __post_init__(self) -> None:
        if not (self.reuse_requires_san and self.reuse_requires_endpoint):
            raise ConfigurationError("The pool always requires SAN coverage and a matching endpoint for reuse")


@dataclass(frozen=True)
class SimResult:
    """
    Outcome of replaying one page.

    Attributes
    ----------
    connections_opened : int
        Connections the ideal pool opens.
    connections_saved : int
        Observed connections minus opened ones.
    observed : int
        Observed connections.
    mapping : Dict[int, int]
        Observed connection id to the id of the simulated connection carrying it (the id of its first member).
    assumptions : Tuple[str, ...]
        What the simulation does not model.
    """

    connections_opened: int
    connections_saved: int
    observed: int
    mapping: Dict[int, int] = field(default_factory=dict)
    assumptions: Tuple[str, ...] = (STREAM_LIMIT_ASSUMPTION,)


@dataclass
class _PooledConnection:
    sim_id: int
    endpoint: Endpoint
    certificate: Certificate
    members: List[ConnectionSession]
    domains: Set[DnsName]
    excluded: Set[DnsName]
    hint: CredentialsHint

    @property
    def open_time(self) -> float:
        return self.members[0].open_time

    def live_at(self, time: float) -> bool:
        return any(m.is_open_at(time) for m in self.members)

    def accepts(self, other: "_PooledConnection") -> bool:
        return (
            other.endpoint == self.endpoint
            and self.live_at(other.open_time)
            and not other.domains & self.excluded
            and not other.excluded & self.domains
            and all(san_covers(self.certificate, d) for d in other.domains)
        )

    def absorb(self, other: "_PooledConnection") -> None:
        self.members.extend(other.members)
        self.domains |= other.domains
        self.excluded |= other.excluded
        if self.hint is CredentialsHint.UNKNOWN:
            self.hint = other.hint


def simulate_pool(timeline: SessionTimeline, policy: PoolPolicy = PoolPolicy()) -> SimResult:
    """
    Replay a page's connections through a pool that reuses whenever the trace proves reuse possible.

    Observed connections are taken in open order. Each joins the first live simulated connection on the same
    endpoint whose certificate (that of its first member) covers every domain the observed connection served and
    that has no 421 for any of them; with credentials partitioning, the credentials hints must also be compatible
    (an unknown hint is compatible with any). Otherwise it opens a new simulated connection, which stays live as
    long as any of its members is open. Without partitioning, whole simulated connections are then merged on the
    same rules ignoring hints, so switching partitioning off never opens more connections.

    Parameters
    ----------
    timeline : SessionTimeline
        The observed page.
    policy : PoolPolicy
        Reuse policy.

    Returns
    -------
    SimResult
        Connection counts and the observed-to-simulated mapping.
    """
    ordered = sorted(timeline.sessions, key=lambda s: s.order_key)
    pool: List[_PooledConnection] = []

    for session in ordered:
        unit = _unit(session)
        for pooled in pool:
            if pooled.accepts(unit) and _compatible(pooled.hint, unit.hint):
                pooled.absorb(unit)
                break
        else:
            pool.append(unit)

    if not policy.credentials_partitioning:
        pool = _merge_groups(pool)

    mapping = {m.conn_id: pooled.sim_id for pooled in pool for m in pooled.members}
    opened = len(pool)
    logger.debug("%s: %d observed, %d simulated", timeline.page_url, len(ordered), opened)
    return SimResult(
        connections_opened=opened,
        connections_saved=len(ordered) - opened,
        observed=len(ordered),
        mapping=dict(sorted(mapping.items())),
    )


def _unit(session: ConnectionSession) -> _PooledConnection:
    domains = {session.domain}
    for request in session.requests:
        try:
            domains.add(origin_of(request.url).host)
        except ValueError:
            continue
    return _PooledConnection(
        sim_id=session.conn_id,
        endpoint=session.endpoint,
        certificate=session.certificate,
        members=[session],
        domains=domains,
        excluded=set(session.excluded_domains),
        hint=session.credentials_hint,
    )


def _compatible(left: CredentialsHint, right: CredentialsHint) -> bool:
    return CredentialsHint.UNKNOWN in (left, right) or left == right


def _merge_groups(pool: List[_PooledConnection]) -> List[_PooledConnection]:
    merged: List[_PooledConnection] = []
    for group in pool:
        for target in merged:
            if target.accepts(group):
                target.absorb(group)
                break
        else:
            merged.append(group)
    return merged
