"""Offline IP to autonomous-system lookup by longest-prefix match."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

from netaddr import AddrFormatError, IPAddress, IPNetwork

from h2coalesce.config import UNMAPPED_ASN
from h2coalesce.schemas.trace_schema import IPAddress as TraceIPAddress
from h2coalesce.utils.exceptions import MappingLoadError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AsInfo:
    """An autonomous system."""

    asn: int
    name: str

    @property
    def label(self) -> str:
        """``AS<number>``."""
        return f"AS{self.asn}"


class Ip2AsnMap:
    """
    Prefix to AS mapping with longest-prefix-match lookup.

    Prefixes are kept in one dictionary per (IP version, prefix length), keyed by network address, so a lookup
    costs one probe per distinct prefix length present.
    """

    def __init__(self) -> None:
        self._tables: Dict[Tuple[int, int], Dict[int, AsInfo]] = {}

    def __len__(self) -> int:
        return sum(len(table) for table in self._tables.values())

    def add(self, prefix: str, info: AsInfo) -> None:
        """
        Map `prefix` to `info`; host bits in `prefix` are ignored.

        Raises
        ------
        AddrFormatError
            If `prefix` is not a CIDR prefix.
        """
        network = IPNetwork(prefix).cidr
        self._tables.setdefault((network.version, network.prefixlen), {})[int(network.network)] = info

    def lookup(self, ip: TraceIPAddress) -> Optional[AsInfo]:
        """Return the AS of the longest prefix containing `ip`, or None."""
        address = IPAddress(str(ip))
        lengths = sorted((length for version, length in self._tables if version == address.version), reverse=True)
        for length in lengths:
            network = IPNetwork(f"{address}/{length}").cidr
            info = self._tables[(address.version, length)].get(int(network.network))
            if info is not None:
                return info
        return None

    def label(self, ip: TraceIPAddress) -> str:
        """Return ``AS<number> <name>`` for `ip`, or the unmapped sentinel."""
        info = self.lookup(ip)
        if info is None:
            return UNMAPPED_ASN
        return f"{info.label} {info.name}".rstrip()

    @classmethod
    def from_lines(cls, lines: Iterable[str], source: str = "<memory>") -> "Ip2AsnMap":
        """
        Parse ``prefix<TAB>asn<TAB>name`` lines; blank lines and ``#`` comments are skipped.

        Raises
        ------
        MappingLoadError
            If a line has fewer than two fields, a bad prefix or a non-numeric AS number.
        """
        mapping = cls()
        for line_number, line in enumerate(lines, start=1):
            text = line.rstrip("\r\n")
            if not text.strip() or text.lstrip().startswith("#"):
                continue
            fields = text.split("\t")
            if len(fields) < 2:
                raise MappingLoadError(source, line_number, "expected prefix<TAB>asn<TAB>name")
            prefix, asn_text = fields[0].strip(), fields[1].strip()
            name = fields[2].strip() if len(fields) > 2 else ""
            asn_digits = asn_text[2:] if asn_text.upper().startswith("AS") else asn_text
            if not asn_digits.isdigit():
                raise MappingLoadError(source, line_number, f"AS number {asn_text!r} is not numeric")
            try:
                mapping.add(prefix, AsInfo(asn=int(asn_digits), name=name))
            except (AddrFormatError, ValueError) as exc:
                raise MappingLoadError(source, line_number, f"bad prefix {prefix!r}") from exc
        logger.info("Loaded %d prefixes from %s", len(mapping), source)
        return mapping

    @classmethod
    def from_file(cls, path: Path) -> "Ip2AsnMap":
        """Load a mapping file."""
        with path.open(encoding="utf-8") as f:
            return cls.from_lines(f, source=str(path))
