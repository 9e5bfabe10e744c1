"""Corpus-level aggregation of page findings into the report tables."""

import logging
import statistics
from collections import Counter, defaultdict
from enum import Enum
from ipaddress import ip_address
from typing import Callable, DefaultDict, Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

from h2coalesce.config import DEFAULT_TOP_N, FLOAT_DIGITS, PUBLISHED_REFERENCE_FIGURES, STREAM_LIMIT_ASSUMPTION
from h2coalesce.poolsim import PoolPolicy, SimResult
from h2coalesce.schemas.finding_schema import PageFindings
from h2coalesce.schemas.report_schema import (
    AsnRow,
    CauseRow,
    CdfPoint,
    CertDomainRow,
    ConnectionRecord,
    CorpusReport,
    Diagnostics,
    FindingRecord,
    IpOriginRow,
    IssuerRow,
    LifetimeStats,
    PageRecord,
    ReportTables,
    SimRecord,
    SimTotals,
)
from h2coalesce.schemas.timeline_schema import MEASURED, WARNING_KEYS, SessionTimeline
from h2coalesce.schemas.trace_schema import CAUSE_ORDER, OPEN_FOREVER, Cause, Finding
from h2coalesce.utils.asn_utils import Ip2AsnMap
from h2coalesce.utils.exceptions import ConfigurationError
from h2coalesce.utils.name_utils import normalize_page_url

logger = logging.getLogger(__name__)

PageInput = Union[PageRecord, Tuple[PageFindings, SimResult]]

CERT = Cause.CERT.value
IP = Cause.IP.value
CRED = Cause.CRED.value


class IssuerScope(Enum):
    """Which certificates the issuer table counts."""

    CERT_ONLY = "cert_only"
    ALL_CONNECTIONS = "all_connections"


def to_page_record(
    findings: PageFindings,
    sim: SimResult,
    timeline: Optional[SessionTimeline] = None,
    policy: PoolPolicy = PoolPolicy(),
    source: str = "",
) -> PageRecord:
    """
    Flatten the classification and simulation of one page into its serializable record.

    Parameters
    ----------
    findings : PageFindings
        Classification result of the page.
    sim : SimResult
        Pool simulation of the page.
    timeline : SessionTimeline, optional
        The timeline both were computed from; contributes its ingest counters.
    policy : PoolPolicy
        Policy the simulation ran under.
    source : str
        File the page was read from.

    Returns
    -------
    PageRecord
        The page record, with times rounded to a fixed number of decimals.
    """
    connections = [
        ConnectionRecord(
            conn_id=c.conn_id,
            origin=str(c.origin),
            domain=str(c.origin.host),
            ip=str(c.endpoint.ip),
            port=c.endpoint.port,
            issuer_org=c.issuer_org,
            open_time=round(c.open_time, FLOAT_DIGITS),
            close_time=None if c.close_time == OPEN_FOREVER else round(c.close_time, FLOAT_DIGITS),
        )
        for c in findings.connections
    ]
    return PageRecord(
        page_url=findings.page_url,
        source=source,
        model=findings.model,
        fetch_mode=findings.fetch_mode.value,
        connections=connections,
        findings=[finding_record(findings.page_url, f) for f in findings.findings],
        sim=SimRecord(
            observed=sim.observed,
            connections_opened=sim.connections_opened,
            connections_saved=sim.connections_saved,
            credentials_partitioning=policy.credentials_partitioning,
        ),
        filters=timeline.filters.as_dict() if timeline is not None else {},
        warnings=dict(sorted(timeline.warnings.items())) if timeline is not None else {},
    )


def finding_record(page_url: str, finding: Finding) -> FindingRecord:
    """Flatten one finding."""
    return FindingRecord(
        page_url=page_url,
        conn_id=finding.conn_id,
        origin=str(finding.origin),
        domain=str(finding.origin.host),
        ip=str(finding.endpoint.ip),
        port=finding.endpoint.port,
        issuer_org=finding.issuer_org,
        causes={cause.value: list(finding.causes[cause]) for cause in CAUSE_ORDER if cause in finding.causes},
        prev_origins={c.value: str(o) for c, o in finding.prev_origin_per_cause.items()},
        prev_domains={c.value: str(o.host) for c, o in finding.prev_origin_per_cause.items()},
        witness_domains={conn_id: str(o.host) for conn_id, o in sorted(finding.witness_origins.items())},
        flagged_witnesses=list(finding.flagged_witnesses),
        port_mismatch_witnesses=list(finding.port_mismatch_witnesses),
    )


def _ranked(counts: Counter, n: Optional[int]) -> List[Tuple[str, int]]:
    # Descending count, ties by name.
    rows = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return rows if n is None else rows[:n]


def _mode(counts: Counter) -> Tuple[Optional[str], int]:
    if not counts:
        return None, 0
    return _ranked(counts, 1)[0]


class _IpOriginFold:
    def __init__(self) -> None:
        self.conns: Counter = Counter()
        self.prev: DefaultDict[str, Counter] = defaultdict(Counter)

    def add(self, finding: FindingRecord) -> None:
        if IP not in finding.causes:
            return
        self.conns[finding.origin] += 1
        self.prev[finding.origin][finding.prev_origins[IP]] += 1

    def rows(self, n: Optional[int]) -> List[IpOriginRow]:
        rows = []
        for rank, (origin, conns) in enumerate(_ranked(self.conns, n), start=1):
            prev_origin, prev_conns = _mode(self.prev[origin])
            rows.append(
                IpOriginRow(rank=rank, origin=origin, conns=conns, prev_origin=prev_origin, prev_conns=prev_conns)
            )
        return rows


class _CertDomainFold:
    def __init__(self) -> None:
        self.conns: Counter = Counter()
        self.prev: DefaultDict[str, Counter] = defaultdict(Counter)
        self.issuers: DefaultDict[str, Counter] = defaultdict(Counter)

    def add(self, finding: FindingRecord) -> None:
        if CERT not in finding.causes:
            return
        self.conns[finding.domain] += 1
        self.prev[finding.domain][finding.prev_domains[CERT]] += 1
        self.issuers[finding.domain][finding.issuer_org] += 1

    def rows(self, n: Optional[int]) -> List[CertDomainRow]:
        rows = []
        for rank, (domain, conns) in enumerate(_ranked(self.conns, n), start=1):
            prev_domain, prev_conns = _mode(self.prev[domain])
            issuer_org, _ = _mode(self.issuers[domain])
            rows.append(
                CertDomainRow(
                    rank=rank,
                    domain=domain,
                    conns=conns,
                    prev_domain=prev_domain,
                    prev_conns=prev_conns,
                    issuer_org=issuer_org,
                )
            )
        return rows


class _GroupFold:
    """Connections and distinct initial domains per group key."""

    def __init__(self) -> None:
        self.conns: Counter = Counter()
        self.domains: DefaultDict[str, Set[str]] = defaultdict(set)

    def add(self, key: str, domain: str) -> None:
        self.conns[key] += 1
        self.domains[key].add(domain)

    def ranked(self, n: Optional[int]) -> List[Tuple[int, str, int, int]]:
        return [
            (rank, key, conns, len(self.domains[key]))
            for rank, (key, conns) in enumerate(_ranked(self.conns, n), start=1)
        ]


class _CredShareFold:
    def __init__(self) -> None:
        self.total = 0
        self.same_domain = 0

    def add(self, finding: FindingRecord) -> None:
        if CRED not in finding.causes:
            return
        self.total += 1
        if any(finding.witness_domains.get(w) == finding.domain for w in finding.causes[CRED]):
            self.same_domain += 1

    @property
    def share(self) -> Optional[float]:
        if not self.total:
            return None
        return round(self.same_domain / self.total, FLOAT_DIGITS)


def top_ip_origins(findings: Iterable[FindingRecord], n: Optional[int] = DEFAULT_TOP_N) -> List[IpOriginRow]:
    """
    Rank subject origins of IP-cause findings.

    Each row carries the most frequent previous origin (the earliest IP witness of each finding) and its count;
    ties on either count are broken by name.
    """
    fold = _IpOriginFold()
    for finding in findings:
        fold.add(finding)
    return fold.rows(n)


def cert_issuer_table(
    pages: Iterable[PageRecord],
    scope: IssuerScope = IssuerScope.CERT_ONLY,
    n: Optional[int] = DEFAULT_TOP_N,
) -> List[IssuerRow]:
    """
    Rank certificate issuers by connections.

    Parameters
    ----------
    pages : Iterable[PageRecord]
        The corpus.
    scope : IssuerScope
        CERT_ONLY counts the subject certificates of CERT findings; ALL_CONNECTIONS counts every connection.
    n : int, optional
        Number of rows; None keeps all.

    Returns
    -------
    List[IssuerRow]
        Issuers with their connection count and number of distinct initial domains.
    """
    fold = _GroupFold()
    for page in pages:
        _add_issuers(fold, page, scope)
    return [IssuerRow(rank=r, issuer_org=k, conns=c, unique_domains=d) for r, k, c, d in fold.ranked(n)]


def _add_issuers(fold: _GroupFold, page: PageRecord, scope: IssuerScope) -> None:
    if scope is IssuerScope.ALL_CONNECTIONS:
        for connection in page.connections:
            fold.add(connection.issuer_org, connection.domain)
    else:
        for finding in page.findings:
            if CERT in finding.causes:
                fold.add(finding.issuer_org, finding.domain)


def cert_domain_table(findings: Iterable[FindingRecord], n: Optional[int] = DEFAULT_TOP_N) -> List[CertDomainRow]:
    """Rank subject domains of CERT-cause findings with their most frequent previous domain and issuer."""
    fold = _CertDomainFold()
    for finding in findings:
        fold.add(finding)
    return fold.rows(n)


def asn_table(findings: Iterable[FindingRecord], ip2asn: Ip2AsnMap, n: Optional[int] = DEFAULT_TOP_N) -> List[AsnRow]:
    """
    Group IP-cause findings by the autonomous system of the subject endpoint.

    Addresses without a covering prefix are grouped under the ``UNMAPPED`` row.
    """
    fold = _GroupFold()
    for finding in findings:
        _add_asn(fold, finding, ip2asn)
    return [AsnRow(rank=r, asn=k, conns=c, unique_domains=d) for r, k, c, d in fold.ranked(n)]


def _add_asn(fold: _GroupFold, finding: FindingRecord, ip2asn: Ip2AsnMap) -> None:
    if IP in finding.causes:
        fold.add(ip2asn.label(ip_address(finding.ip)), finding.domain)


def cred_same_domain_share(findings: Iterable[FindingRecord]) -> Optional[float]:
    """
    Fraction of CRED findings with a CRED witness opened for the same initial domain.

    Returns None when there are no CRED findings.
    """
    fold = _CredShareFold()
    for finding in findings:
        fold.add(finding)
    return fold.share


class CorpusAggregator:  # pylint: disable=too-many-instance-attributes
    """
    Streaming fold of page records into a CorpusReport.

    Pages may be added in any order; the report depends only on the multiset of pages added.

    Parameters
    ----------
    corpus : str
        Corpus name carried into the report.
    top_n : int, optional
        Rows per ranked table; None keeps all.
    ip2asn : Ip2AsnMap, optional
        Mapping for the ASN table; the table is omitted without one.
    """

    def __init__(self, corpus: str, top_n: Optional[int] = DEFAULT_TOP_N, ip2asn: Optional[Ip2AsnMap] = None) -> None:
        self.corpus = corpus
        self.top_n = top_n
        self.ip2asn = ip2asn
        self.model: Optional[str] = None
        self.fetch_mode: Optional[str] = None
        self.partitioning: Optional[bool] = None

        self.pages = 0
        self.sites = 0
        self.redundant_sites = 0
        self.total_connections = 0
        self.redundant_connections = 0
        self.cause_sites: Counter = Counter()
        self.cause_conns: Counter = Counter()
        self.redundant_per_site: Counter = Counter()
        self.measured_connections = 0
        self.closed_lifetimes: List[float] = []
        self.diagnostics: Counter = Counter()
        self.sim: Counter = Counter()
        self.filters: Counter = Counter()
        self.warnings: Counter = Counter()

        self._ip_origins = _IpOriginFold()
        self._cert_domains = _CertDomainFold()
        self._cert_issuers = _GroupFold()
        self._all_issuers = _GroupFold()
        self._asn = _GroupFold()
        self._cred_share = _CredShareFold()

    def add(self, page: PageInput) -> None:
        """
        Fold one page into the aggregate.

        Raises
        ------
        ConfigurationError
            If the page was analyzed under a different duration model, fetch mode or pool policy than earlier pages.
        """
        if not isinstance(page, PageRecord):
            page = to_page_record(*page)
        self._check_uniform(page)

        self.pages += 1
        self.total_connections += len(page.connections)
        self.redundant_connections += len(page.findings)
        if page.connections:
            self.sites += 1
            self.redundant_per_site[len(page.findings)] += 1
        if page.findings:
            self.redundant_sites += 1

        page_causes: Set[str] = set()
        for finding in page.findings:
            page_causes.update(finding.causes)
            self.cause_conns.update(finding.causes.keys())
            self.diagnostics["flagged_witnesses"] += len(finding.flagged_witnesses)
            self.diagnostics["port_mismatch_witnesses"] += len(finding.port_mismatch_witnesses)
            self._ip_origins.add(finding)
            self._cert_domains.add(finding)
            self._cred_share.add(finding)
            if self.ip2asn is not None:
                _add_asn(self._asn, finding, self.ip2asn)
        self.cause_sites.update(page_causes)

        _add_issuers(self._cert_issuers, page, IssuerScope.CERT_ONLY)
        _add_issuers(self._all_issuers, page, IssuerScope.ALL_CONNECTIONS)

        if page.model == MEASURED:
            for connection in page.connections:
                self.measured_connections += 1
                if connection.close_time is not None:
                    self.closed_lifetimes.append(connection.close_time - connection.open_time)

        self.sim["observed"] += page.sim.observed
        self.sim["connections_opened"] += page.sim.connections_opened
        self.sim["connections_saved"] += page.sim.connections_saved
        self.filters.update(page.filters)
        self.warnings.update(page.warnings)

    def _check_uniform(self, page: PageRecord) -> None:
        if self.model is None:
            self.model, self.fetch_mode = page.model, page.fetch_mode
            self.partitioning = page.sim.credentials_partitioning
            return
        if (page.model, page.fetch_mode) != (self.model, self.fetch_mode):
            raise ConfigurationError(
                f"Page {page.page_url} was analyzed as {page.model}/{page.fetch_mode}, "
                f"the corpus as {self.model}/{self.fetch_mode}"
            )
        if page.sim.credentials_partitioning != self.partitioning:
            raise ConfigurationError(f"Page {page.page_url} was simulated under a different pool policy")

    def cdf(self) -> List[CdfPoint]:
        """Fraction of sites with at least k redundant connections, for k from 0 to the maximum."""
        if not self.sites:
            return []
        points = []
        at_least = self.sites
        for k in range(max(self.redundant_per_site) + 1):
            points.append(CdfPoint(k=k, fraction=round(at_least / self.sites, FLOAT_DIGITS)))
            at_least -= self.redundant_per_site[k]
        return points

    def lifetimes(self) -> LifetimeStats:
        """Lifetime statistics of measured connections."""
        if not self.measured_connections:
            return LifetimeStats()
        median = statistics.median(self.closed_lifetimes) if self.closed_lifetimes else None
        return LifetimeStats(
            measured_connections=self.measured_connections,
            closed_fraction=round(len(self.closed_lifetimes) / self.measured_connections, FLOAT_DIGITS),
            median_closed_lifetime_ms=None if median is None else round(median, FLOAT_DIGITS),
        )

    def result(self) -> CorpusReport:
        """Build the report of everything added so far."""
        n = self.top_n
        policy = PoolPolicy(credentials_partitioning=self.partitioning is not False)
        return CorpusReport(
            corpus=self.corpus,
            model=self.model,
            fetch_mode=self.fetch_mode,
            pages=self.pages,
            sites=self.sites,
            redundant_sites=self.redundant_sites,
            total_connections=self.total_connections,
            redundant_connections=self.redundant_connections,
            non_redundant_connections=self.total_connections - self.redundant_connections,
            causes=[
                CauseRow(cause=c.value, sites=self.cause_sites[c.value], connections=self.cause_conns[c.value])
                for c in CAUSE_ORDER
            ],
            cdf=self.cdf(),
            cred_same_domain_share=self._cred_share.share,
            sim=SimTotals(
                observed=self.sim["observed"],
                connections_opened=self.sim["connections_opened"],
                connections_saved=self.sim["connections_saved"],
                policy={
                    "credentials_partitioning": policy.credentials_partitioning,
                    "reuse_requires_san": policy.reuse_requires_san,
                    "reuse_requires_endpoint": policy.reuse_requires_endpoint,
                },
                assumptions=[STREAM_LIMIT_ASSUMPTION] if self.pages else [],
            ),
            lifetimes=self.lifetimes(),
            diagnostics=Diagnostics(**self.diagnostics),
            filters=dict(sorted(self.filters.items())),
            warnings={key: self.warnings[key] for key in WARNING_KEYS},
            tables=ReportTables(
                top_ip_origins=self._ip_origins.rows(n),
                cert_issuers=[
                    IssuerRow(rank=r, issuer_org=k, conns=c, unique_domains=d)
                    for r, k, c, d in self._cert_issuers.ranked(n)
                ],
                cert_domains=self._cert_domains.rows(n),
                issuer_market_share=[
                    IssuerRow(rank=r, issuer_org=k, conns=c, unique_domains=d)
                    for r, k, c, d in self._all_issuers.ranked(n)
                ],
                asn=(
                    None
                    if self.ip2asn is None
                    else [AsnRow(rank=r, asn=k, conns=c, unique_domains=d) for r, k, c, d in self._asn.ranked(n)]
                ),
            ),
            reference=dict(sorted(PUBLISHED_REFERENCE_FIGURES.items())),
        )


def aggregate_corpus(
    pages: Iterable[PageInput],
    corpus: str = "corpus",
    top_n: Optional[int] = DEFAULT_TOP_N,
    ip2asn: Optional[Ip2AsnMap] = None,
) -> CorpusReport:
    """
    Aggregate a stream of analyzed pages.

    A site counts toward a cause if at least one of its findings carries it; connection counts per cause sum the
    findings carrying it, so they may exceed the redundant total when a connection has several causes.

    Parameters
    ----------
    pages : Iterable[PageInput]
        Page records, or ``(PageFindings, SimResult)`` pairs.
    corpus : str
        Corpus name.
    top_n : int, optional
        Rows per ranked table.
    ip2asn : Ip2AsnMap, optional
        Mapping for the ASN table.

    Returns
    -------
    CorpusReport
        The aggregate.

    Raises
    ------
    ConfigurationError
        If pages were analyzed under different duration models or fetch modes.
    """
    aggregator = CorpusAggregator(corpus, top_n=top_n, ip2asn=ip2asn)
    for page in pages:
        aggregator.add(page)
    logger.info("Aggregated %d pages of %s", aggregator.pages, corpus)
    return aggregator.result()


def intersect_pages(
    pages_a: Sequence[PageRecord],
    pages_b: Sequence[PageRecord],
    key: Callable[[str], str] = normalize_page_url,
) -> Tuple[List[PageRecord], List[PageRecord]]:
    """Restrict both corpora to the pages whose normalized URL appears in both."""
    keys_a = {key(p.page_url) for p in pages_a}
    keys_b = {key(p.page_url) for p in pages_b}
    shared = keys_a & keys_b
    return [p for p in pages_a if key(p.page_url) in shared], [p for p in pages_b if key(p.page_url) in shared]


def intersect_corpora(
    pages_a: Sequence[PageRecord],
    pages_b: Sequence[PageRecord],
    names: Tuple[str, str] = ("a", "b"),
    key: Callable[[str], str] = normalize_page_url,
    top_n: Optional[int] = DEFAULT_TOP_N,
    ip2asn: Optional[Ip2AsnMap] = None,
) -> Tuple[CorpusReport, CorpusReport]:
    """
    Aggregate two corpora over their shared pages only.

    Parameters
    ----------
    pages_a, pages_b : Sequence[PageRecord]
        The two corpora.
    names : Tuple[str, str]
        Corpus names of the two reports.
    key : Callable[[str], str]
        Page URL normalizer deciding which pages match.
    top_n : int, optional
        Rows per ranked table.
    ip2asn : Ip2AsnMap, optional
        Mapping for the ASN tables.

    Returns
    -------
    Tuple[CorpusReport, CorpusReport]
        The report of each side.
    """
    shared_a, shared_b = intersect_pages(pages_a, pages_b, key)
    logger.info("%s and %s share %d / %d pages", names[0], names[1], len(shared_a), len(shared_b))
    return (
        aggregate_corpus(shared_a, corpus=names[0], top_n=top_n, ip2asn=ip2asn),
        aggregate_corpus(shared_b, corpus=names[1], top_n=top_n, ip2asn=ip2asn),
    )


def table_rows(report: CorpusReport) -> Dict[str, List[Dict[str, object]]]:
    """
    Return every table of a report as plain rows keyed by table name.

    ``causes`` is the per-cause table with its totals rows; ``cdf`` the redundancy distribution.
    """
    causes: List[Dict[str, object]] = [row.model_dump() for row in report.causes]
    causes.append({"cause": "redundant", "sites": report.redundant_sites, "connections": report.redundant_connections})
    causes.append({"cause": "total", "sites": report.sites, "connections": report.total_connections})
    tables: Dict[str, List[Dict[str, object]]] = {
        "causes": causes,
        "cdf": [p.model_dump() for p in report.cdf],
        "ip_origins": [r.model_dump() for r in report.tables.top_ip_origins],
        "cert_issuers": [r.model_dump() for r in report.tables.cert_issuers],
        "cert_domains": [r.model_dump() for r in report.tables.cert_domains],
        "issuer_market_share": [r.model_dump() for r in report.tables.issuer_market_share],
    }
    if report.tables.asn is not None:
        tables["asn"] = [r.model_dump() for r in report.tables.asn]
    return tables
