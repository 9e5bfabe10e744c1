"""Pydantic models for serialized page records and the corpus report."""

from typing import Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field


class ConnectionRecord(BaseModel):
    """One HTTP/2 connection of a page. `close_time` is None for a connection that never closed."""

    model_config = ConfigDict(frozen=True)

    conn_id: int
    origin: str
    domain: str
    ip: str
    port: int
    issuer_org: str
    open_time: float
    close_time: Optional[float] = None


class FindingRecord(BaseModel):  # pylint: disable=too-many-instance-attributes
    """
    One redundant connection, flattened for line-delimited output.

    Cause keys are ``CERT``, ``IP`` and ``CRED``; witness ids are in open order.
    """

    model_config = ConfigDict(frozen=True)

    page_url: str
    conn_id: int
    origin: str
    domain: str
    ip: str
    port: int
    issuer_org: str
    causes: Dict[str, List[int]]
    prev_origins: Dict[str, str]
    prev_domains: Dict[str, str]
    witness_domains: Dict[int, str] = Field(default_factory=dict)
    flagged_witnesses: List[int] = Field(default_factory=list)
    port_mismatch_witnesses: List[int] = Field(default_factory=list)


class SimRecord(BaseModel):
    """Pool simulation outcome of a page."""

    model_config = ConfigDict(frozen=True)

    observed: int
    connections_opened: int
    connections_saved: int
    credentials_partitioning: bool


class PageRecord(BaseModel):
    """Everything the corpus report needs about one page; one JSON document per line in ``*_pages.ndjson``."""

    model_config = ConfigDict(frozen=True)

    page_url: str
    source: str = ""
    model: str
    fetch_mode: str
    connections: List[ConnectionRecord] = Field(default_factory=list)
    findings: List[FindingRecord] = Field(default_factory=list)
    sim: SimRecord
    filters: Dict[str, int] = Field(default_factory=dict)
    warnings: Dict[str, int] = Field(default_factory=dict)


class CauseRow(BaseModel):
    """Sites and connections affected by one cause."""

    cause: str
    sites: int = 0
    connections: int = 0


class CdfPoint(BaseModel):
    """Fraction of sites with at least `k` redundant connections."""

    k: int
    fraction: float


class IpOriginRow(BaseModel):
    """Origins with IP-cause redundant connections and their most frequent reusable previous origin."""

    rank: int
    origin: str
    conns: int
    prev_origin: Optional[str] = None
    prev_conns: int = 0


class IssuerRow(BaseModel):
    """Connections and distinct initial domains per certificate issuer."""

    rank: int
    issuer_org: str
    conns: int
    unique_domains: int


class CertDomainRow(BaseModel):
    """Domains with CERT-cause redundant connections, their most frequent previous domain and their issuer."""

    rank: int
    domain: str
    conns: int
    prev_domain: Optional[str] = None
    prev_conns: int = 0
    issuer_org: Optional[str] = None


class AsnRow(BaseModel):
    """IP-cause redundant connections per autonomous system of the subject endpoint."""

    rank: int
    asn: str
    conns: int
    unique_domains: int


class SimTotals(BaseModel):
    """Pool simulation summed over the corpus."""

    observed: int = 0
    connections_opened: int = 0
    connections_saved: int = 0
    policy: Dict[str, bool] = Field(default_factory=dict)
    assumptions: List[str] = Field(default_factory=list)


class LifetimeStats(BaseModel):
    """Lifetimes of measured connections; None for modeled timelines."""

    measured_connections: int = 0
    closed_fraction: Optional[float] = None
    median_closed_lifetime_ms: Optional[float] = None


class Diagnostics(BaseModel):
    """Witness pairs worth inspecting by hand."""

    flagged_witnesses: int = 0
    port_mismatch_witnesses: int = 0


class ReportTables(BaseModel):
    """The ranked tables of a corpus."""

    top_ip_origins: List[IpOriginRow] = Field(default_factory=list)
    cert_issuers: List[IssuerRow] = Field(default_factory=list)
    cert_domains: List[CertDomainRow] = Field(default_factory=list)
    issuer_market_share: List[IssuerRow] = Field(default_factory=list)
    asn: Optional[List[AsnRow]] = None


class CorpusReport(BaseModel):  # pylint: disable=too-many-instance-attributes
    """
    Aggregate results of one corpus under one duration model and fetch mode.

    `sites` counts pages with at least one HTTP/2 connection; `pages` counts every page read.
    """

    corpus: str
    model: Optional[str] = None
    fetch_mode: Optional[str] = None
    pages: int = 0
    sites: int = 0
    redundant_sites: int = 0
    total_connections: int = 0
    redundant_connections: int = 0
    non_redundant_connections: int = 0
    causes: List[CauseRow] = Field(default_factory=list)
    cdf: List[CdfPoint] = Field(default_factory=list)
    cred_same_domain_share: Optional[float] = None
    sim: SimTotals = Field(default_factory=SimTotals)
    lifetimes: LifetimeStats = Field(default_factory=LifetimeStats)
    diagnostics: Diagnostics = Field(default_factory=Diagnostics)
    filters: Dict[str, int] = Field(default_factory=dict)
    warnings: Dict[str, int] = Field(default_factory=dict)
    tables: ReportTables = Field(default_factory=ReportTables)
    reference: Dict[str, Union[int, float]] = Field(default_factory=dict)

    def cause(self, name: str) -> CauseRow:
        """Return the row of cause `name`."""
        return next(row for row in self.causes if row.cause == name)
