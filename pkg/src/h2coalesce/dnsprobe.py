"""Resolve a domain list through many resolvers on a schedule and measure where their answers overlap."""

import asyncio
import csv
import itertools
import json
import logging
import sys
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from ipaddress import ip_address
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import dns.asyncquery
import dns.asyncresolver
import dns.edns
import dns.message
import dns.rdatatype

from h2coalesce.schemas.config_schema import ProbeConfig
from h2coalesce.schemas.trace_schema import IPAddress
from h2coalesce.utils.exceptions import (
    AsyncTimeoutError,
    ConfigurationError,
    InvalidDnsNameError,
    MappingLoadError,
    UnknownDomainError,
)
from h2coalesce.utils.name_utils import normalize_dns_name
from h2coalesce.utils.timeout_wrapper import async_timeout

if sys.version_info >= (3, 10):
    from typing import Protocol, TypeAlias
else:
    from typing import Protocol

    from typing_extensions import TypeAlias

logger = logging.getLogger(__name__)

SCRIPT_START = datetime(2021, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class ResolverSpec:
    """A recursive resolver and its operator/country label."""

    address: IPAddress
    label: str

    @property
    def key(self) -> str:
        """The address as text; identifies the resolver in snapshots."""
        return str(self.address)


class Failure(Enum):
    """Marker of a cell whose query failed or timed out."""

    FAILED = "FAILED"


FAILED = Failure.FAILED

Answer: TypeAlias = Union[FrozenSet[IPAddress], Failure]
Cell: TypeAlias = Tuple[str, str]


@dataclass(frozen=True)
class Resolution:
    """Final addresses of one lookup and the CNAME chain that led to them."""

    addresses: FrozenSet[IPAddress]
    cnames: Tuple[str, ...] = ()


@dataclass(frozen=True)
class ResolutionSnapshot:
    """
    The answers of one probe round.

    Attributes
    ----------
    timeslot : datetime
        When the round started.
    answers : Mapping[Cell, Answer]
        ``(resolver address, domain)`` to a non-empty address set, or FAILED.
    cnames : Mapping[Cell, Tuple[str, ...]]
        CNAME chains of the answered cells, for inspection only.
    """

    timeslot: datetime
    answers: Mapping[Cell, Answer]
    cnames: Mapping[Cell, Tuple[str, ...]] = field(default_factory=dict)

    @property
    def domains(self) -> FrozenSet[str]:
        """Domains probed in this round."""
        return frozenset(domain for _, domain in self.answers)

    @property
    def resolvers(self) -> FrozenSet[str]:
        """Resolver addresses probed in this round."""
        return frozenset(resolver for resolver, _ in self.answers)

    def failed(self, domains: Optional[Iterable[str]] = None) -> List[Cell]:
        """Return the failed cells, optionally restricted to `domains`."""
        wanted = None if domains is None else set(domains)
        return sorted(
            cell for cell, answer in self.answers.items() if answer is FAILED and (wanted is None or cell[1] in wanted)
        )


@dataclass(frozen=True)
class OverlapSeries:
    """Per-slot count of resolvers whose answers for two domains share an address."""

    domain_a: str
    domain_b: str
    points: Tuple[Tuple[datetime, int], ...]
    skipped_slots: Tuple[datetime, ...] = ()

    @property
    def skipped(self) -> int:
        """Number of slots left out for failed cells."""
        return len(self.skipped_slots)


class ResolverClient(Protocol):
    """Anything that can resolve a domain through a given resolver."""

    async def resolve(self, resolver: ResolverSpec, domain: str, round_index: int) -> Resolution:
        """Return the final A and AAAA addresses of `domain` as answered by `resolver`."""

    async def supports_ecs(self, resolver: ResolverSpec, domain: str) -> bool:
        """Return True if `resolver` echoes an EDNS client-subnet option."""


class DnspythonClient:
    """
    Live client: plain A and AAAA queries over UDP (falling back to TCP) without a client-subnet option.

    Parameters
    ----------
    timeout_s : float
        Lifetime of each query.
    """

    def __init__(self, timeout_s: float) -> None:
        self.timeout_s = timeout_s

    def _resolver(self, resolver: ResolverSpec) -> dns.asyncresolver.Resolver:
        client = dns.asyncresolver.Resolver(configure=False)
        client.nameservers = [resolver.key]
        client.lifetime = self.timeout_s
        client.timeout = self.timeout_s
        return client

    async def resolve(self, resolver: ResolverSpec, domain: str, round_index: int) -> Resolution:
        client = self._resolver(resolver)
        addresses = set()
        cnames: List[str] = []
        for rdtype in (dns.rdatatype.A, dns.rdatatype.AAAA):
            answer = await client.resolve(domain, rdtype, raise_on_no_answer=False)
            if answer.rrset is not None:
                addresses.update(ip_address(rdata.address) for rdata in answer.rrset)
            for rrset in answer.response.answer:
                if rrset.rdtype == dns.rdatatype.CNAME:
                    cnames.extend(str(rdata.target).rstrip(".") for rdata in rrset)
        return Resolution(addresses=frozenset(addresses), cnames=tuple(dict.fromkeys(cnames)))

    async def supports_ecs(self, resolver: ResolverSpec, domain: str) -> bool:
        subnet = "0.0.0.0" if resolver.address.version == 4 else "::"
        query = dns.message.make_query(
            domain, dns.rdatatype.A, use_edns=0, options=[dns.edns.ECSOption(subnet, srclen=0)]
        )
        response = await dns.asyncquery.udp(query, resolver.key, timeout=self.timeout_s)
        return any(isinstance(option, dns.edns.ECSOption) for option in response.options)


class ScriptedClient:
    """
    Offline client replaying a JSON fixture.

    The fixture has a ``slots`` list; the ``answers`` object of each slot maps resolver address to domain to a list of
    addresses, ``"FAILED"`` (the query fails) or ``"TIMEOUT"`` (the query never returns). A slot may carry a
    ``timeslot`` in ISO format. An optional top-level ``ecs`` object maps resolver addresses to whether they echo
    client-subnet.
    """

    def __init__(self, slots: Sequence[Mapping[str, Any]], ecs: Optional[Mapping[str, bool]] = None) -> None:
        self.slots = list(slots)
        self.ecs = dict(ecs or {})

    @classmethod
    def from_file(cls, path: Path) -> "ScriptedClient":
        """
        Load a fixture file.

        Raises
        ------
        ConfigurationError
            If the file is not a fixture.
        """
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            return cls(data["slots"], data.get("ecs"))
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigurationError(f"{path} is not a scripted resolver fixture: {exc}") from exc

    @property
    def rounds(self) -> int:
        """Number of scripted rounds."""
        return len(self.slots)

    def timeslot(self, round_index: int, interval_s: float) -> datetime:
        """Timeslot of a round: the scripted one, or evenly spaced from a fixed start."""
        raw = self.slots[round_index].get("timeslot") if round_index < len(self.slots) else None
        if raw:
            return datetime.fromisoformat(raw[:-1] + "+00:00" if raw.endswith("Z") else raw)
        return SCRIPT_START + timedelta(seconds=interval_s * round_index)

    async def resolve(self, resolver: ResolverSpec, domain: str, round_index: int) -> Resolution:
        cell = self.slots[round_index]["answers"][resolver.key][domain]
        if cell == "TIMEOUT":
            await asyncio.Event().wait()
        if cell == "FAILED":
            raise LookupError(f"scripted failure for {resolver.key} -> {domain}")
        return Resolution(addresses=frozenset(ip_address(address) for address in cell))

    async def supports_ecs(self, resolver: ResolverSpec, domain: str) -> bool:
        return bool(self.ecs.get(resolver.key, False))


async def probe_round(
    domains: Sequence[str],
    resolvers: Sequence[ResolverSpec],
    client: ResolverClient,
    timeout_s: float,
    round_index: int = 0,
    timeslot: Optional[datetime] = None,
) -> ResolutionSnapshot:
    """
    Resolve every domain through every resolver concurrently.

    A query that raises, exceeds `timeout_s` or returns no address fills its cell with FAILED; failures never
    abort the round.

    Parameters
    ----------
    domains : Sequence[str]
        Normalized domains.
    resolvers : Sequence[ResolverSpec]
        Resolvers with unique addresses.
    client : ResolverClient
        Query implementation.
    timeout_s : float
        Per-query deadline.
    round_index : int
        Index of the round in the schedule.
    timeslot : datetime, optional
        Timeslot to record; now (UTC, whole seconds) by default.

    Returns
    -------
    ResolutionSnapshot
        One cell per (resolver, domain).
    """
    slot = timeslot or datetime.now(timezone.utc).replace(microsecond=0)
    cells = [(resolver, domain) for resolver in resolvers for domain in domains]
    results = await asyncio.gather(*(_query(client, r, d, timeout_s, round_index) for r, d in cells))

    answers: Dict[Cell, Answer] = {}
    cnames: Dict[Cell, Tuple[str, ...]] = {}
    for (resolver, domain), result in zip(cells, results):
        key = (resolver.key, domain)
        if result is None or not result.addresses:
            answers[key] = FAILED
        else:
            answers[key] = result.addresses
            if result.cnames:
                cnames[key] = result.cnames
    failed = sum(1 for answer in answers.values() if answer is FAILED)
    logger.info("Round %d at %s: %d cells, %d failed", round_index, slot.isoformat(), len(answers), failed)
    return ResolutionSnapshot(timeslot=slot, answers=answers, cnames=cnames)


async def _query(
    client: ResolverClient,
    resolver: ResolverSpec,
    domain: str,
    timeout_s: float,
    round_index: int,
) -> Optional[Resolution]:
    bounded = async_timeout(timeout_s, f"{resolver.key} -> {domain}")(client.resolve)
    try:
        return await bounded(resolver, domain, round_index)
    except AsyncTimeoutError as exc:
        logger.debug("%s", exc)
    except Exception as exc:
        logger.debug("Query %s -> %s failed: %s", resolver.key, domain, exc)
    return None


def overlap_series(
    snapshots: Sequence[ResolutionSnapshot],
    domain_a: str,
    domain_b: str,
    strict: bool = True,
) -> OverlapSeries:
    """
    Count, per timeslot, the resolvers whose answers for the two domains share at least one address.

    Parameters
    ----------
    snapshots : Sequence[ResolutionSnapshot]
        Rounds over one resolver set.
    domain_a, domain_b : str
        The pair; order does not affect the counts.
    strict : bool
        Skip a slot if any of its cells failed (default); otherwise skip only if a cell of the pair failed.

    Returns
    -------
    OverlapSeries
        Points in snapshot order and the skipped slots.

    Raises
    ------
    UnknownDomainError
        If a domain appears in no snapshot.
    """
    a = str(normalize_dns_name(domain_a))
    b = str(normalize_dns_name(domain_b))
    probed = frozenset().union(*(s.domains for s in snapshots)) if snapshots else frozenset()
    for domain in (a, b):
        if domain not in probed:
            raise UnknownDomainError(domain)

    points: List[Tuple[datetime, int]] = []
    skipped: List[datetime] = []
    for snapshot in snapshots:
        if snapshot.failed(None if strict else (a, b)) or not {a, b} <= snapshot.domains:
            skipped.append(snapshot.timeslot)
            continue
        count = 0
        for resolver in sorted(snapshot.resolvers):
            answers_a = snapshot.answers[(resolver, a)]
            answers_b = snapshot.answers[(resolver, b)]
            if isinstance(answers_a, frozenset) and isinstance(answers_b, frozenset) and answers_a & answers_b:
                count += 1
        points.append((snapshot.timeslot, count))
    return OverlapSeries(domain_a=a, domain_b=b, points=tuple(points), skipped_slots=tuple(skipped))


def load_resolvers(path: Path) -> List[ResolverSpec]:
    """
    Read ``ip<TAB>label`` lines; blank lines and ``#`` comments are skipped.

    Raises
    ------
    MappingLoadError
        If an address does not parse or appears twice.
    """
    resolvers: List[ResolverSpec] = []
    seen = set()
    with path.open(encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            raw_address, _, label = text.partition("\t")
            try:
                address = ip_address(raw_address.strip())
            except ValueError as exc:
                message = f"resolver address {raw_address!r} is not an IP"
                raise MappingLoadError(str(path), line_number, message) from exc
            if address in seen:
                raise MappingLoadError(str(path), line_number, f"resolver {address} listed twice")
            seen.add(address)
            resolvers.append(ResolverSpec(address=address, label=label.strip() or str(address)))
    return resolvers


def load_domains(path: Path) -> List[str]:
    """
    Read one domain per line, normalized; duplicates are dropped keeping the first occurrence.

    Raises
    ------
    MappingLoadError
        If a line is not a valid host name.
    """
    domains: Dict[str, None] = {}
    with path.open(encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                domains.setdefault(str(normalize_dns_name(text)), None)
            except InvalidDnsNameError as exc:
                raise MappingLoadError(str(path), line_number, str(exc)) from exc
    return list(domains)


class SnapshotStore:
    """Append-only NDJSON file of snapshots; every append is flushed before returning."""

    def __init__(self, path: Path) -> None:
        self.path = path

    def append(self, snapshot: ResolutionSnapshot) -> None:
        """Persist one snapshot."""
        cells = []
        for (resolver, domain), answer in sorted(snapshot.answers.items()):
            cells.append(
                {
                    "resolver": resolver,
                    "domain": domain,
                    "addresses": FAILED.value if answer is FAILED else sorted(str(a) for a in answer),
                    "cnames": list(snapshot.cnames.get((resolver, domain), ())),
                }
            )
        line = json.dumps({"timeslot": snapshot.timeslot.isoformat(), "cells": cells}, sort_keys=True)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as f:
            f.write(line + "\n")
            f.flush()


def load_snapshots(path: Path) -> List[ResolutionSnapshot]:
    """Reload the snapshots of a store file; a torn last line is ignored with a warning."""
    snapshots = []
    with path.open(encoding="utf-8") as f:
        lines = [line for line in f if line.strip()]
    for index, line in enumerate(lines):
        try:
            data = json.loads(line)
        except json.JSONDecodeError:
            if index == len(lines) - 1:
                warnings.warn(f"Ignoring incomplete last snapshot in {path}", UserWarning)
                break
            raise
        answers: Dict[Cell, Answer] = {}
        cnames: Dict[Cell, Tuple[str, ...]] = {}
        for cell in data["cells"]:
            key = (cell["resolver"], cell["domain"])
            raw = cell["addresses"]
            answers[key] = FAILED if raw == FAILED.value else frozenset(ip_address(a) for a in raw)
            if cell.get("cnames"):
                cnames[key] = tuple(cell["cnames"])
        snapshots.append(
            ResolutionSnapshot(timeslot=datetime.fromisoformat(data["timeslot"]), answers=answers, cnames=cnames)
        )
    return snapshots


async def check_ecs(resolvers: Sequence[ResolverSpec], domain: str, client: ResolverClient) -> List[ResolverSpec]:
    """
    Send a zero-length client-subnet query to each resolver and warn for those that echo the option.

    Resolvers are not excluded; the returned list is for the operator to act on.
    """
    flagged = []
    for resolver in resolvers:
        try:
            echoes = await client.supports_ecs(resolver, domain)
        except Exception as exc:
            logger.warning("Client-subnet check against %s failed: %s", resolver.key, exc)
            continue
        if echoes:
            warnings.warn(f"Resolver {resolver.key} ({resolver.label}) supports EDNS client-subnet", UserWarning)
            flagged.append(resolver)
    return flagged


async def run_schedule(
    config: ProbeConfig,
    domains: Sequence[str],
    resolvers: Sequence[ResolverSpec],
    client: ResolverClient,
    store: SnapshotStore,
) -> int:
    """
    Run the probe rounds, persisting each snapshot as soon as it completes.

    A scripted client runs one round per scripted slot with no waiting; a live client runs `config.rounds`
    rounds `config.interval_s` apart.

    Returns
    -------
    int
        Number of rounds completed.
    """
    scripted = client if isinstance(client, ScriptedClient) else None
    rounds = scripted.rounds if scripted is not None else config.rounds
    if config.check_ecs and domains:
        await check_ecs(resolvers, domains[0], client)

    for index in range(rounds):
        timeslot = scripted.timeslot(index, config.interval_s) if scripted is not None else None
        snapshot = await probe_round(domains, resolvers, client, config.timeout_s, index, timeslot)
        store.append(snapshot)
        if scripted is None and index < rounds - 1:
            await asyncio.sleep(config.interval_s)
    return rounds


def probe_pairs(domains: Sequence[str], pairs: Sequence[Tuple[str, str]] = ()) -> List[Tuple[str, str]]:
    """The chosen pairs, normalized; every unordered pair of distinct domains if none were chosen."""
    if pairs:
        return [(str(normalize_dns_name(a)), str(normalize_dns_name(b))) for a, b in pairs]
    return list(itertools.combinations(domains, 2))


def write_overlap(series: Sequence[OverlapSeries], output_dir: Path, name: str) -> List[Path]:
    """
    Write one ``<name>_overlap_<a>__<b>.csv`` per pair and the ``<name>_skipped.csv`` log.

    Returns
    -------
    List[Path]
        The files written.
    """
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for item in series:
        path = output_dir / f"{name}_overlap_{item.domain_a}__{item.domain_b}.csv"
        with path.open("w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["timeslot", "overlap"])
            writer.writerows((slot.isoformat(), count) for slot, count in item.points)
        paths.append(path)

    skipped_path = output_dir / f"{name}_skipped.csv"
    with skipped_path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["domain_a", "domain_b", "timeslot"])
        for item in series:
            writer.writerows((item.domain_a, item.domain_b, slot.isoformat()) for slot in item.skipped_slots)
    paths.append(skipped_path)
    return paths


def run_probe(config: ProbeConfig, client: Optional[ResolverClient] = None) -> List[OverlapSeries]:
    """
    Load the lists, run the schedule and write the overlap files.

    An interrupt stops the schedule; overlap files are then written from the snapshots persisted so far.

    Parameters
    ----------
    config : ProbeConfig
        Run configuration.
    client : ResolverClient, optional
        Query implementation; by default the scripted fixture of the configuration, or live dnspython queries.

    Returns
    -------
    List[OverlapSeries]
        One series per pair.

    Raises
    ------
    MappingLoadError
        If the resolver or domain list is malformed.
    """
    resolvers = load_resolvers(config.resolvers)
    domains = load_domains(config.domains)
    if client is None:
        client = ScriptedClient.from_file(config.scripted) if config.scripted else DnspythonClient(config.timeout_s)

    store_path = config.output_dir / f"{config.name}_snapshots.ndjson"
    if store_path.exists():
        store_path.unlink()
    store = SnapshotStore(store_path)
    try:
        rounds = asyncio.run(run_schedule(config, domains, resolvers, client, store))
        logger.info("Completed %d rounds", rounds)
    except KeyboardInterrupt:
        logger.warning("Interrupted; writing overlap from the snapshots persisted so far")

    snapshots = load_snapshots(store_path) if store_path.exists() else []
    series = []
    if snapshots:
        series = [overlap_series(snapshots, a, b) for a, b in probe_pairs(domains, config.pairs)]
    write_overlap(series, config.output_dir, config.name)
    return series
