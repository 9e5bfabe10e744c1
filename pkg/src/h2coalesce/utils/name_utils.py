"""Utility functions for normalizing host names, origins, endpoints and SAN patterns."""

import ipaddress
import re
from typing import Iterable, List, Optional, Tuple, Union
from urllib.parse import SplitResult, urlsplit

from h2coalesce.config import HTTPS_DEFAULT_PORT
from h2coalesce.schemas.trace_schema import DnsName, Endpoint, IPAddress, Origin
from h2coalesce.utils.exceptions import InvalidDnsNameError, UnsupportedSchemeError

MAX_LABEL_OCTETS = 63
MAX_NAME_OCTETS = 253

# Underscores occur in real service names (e.g. _dmarc), so they are tolerated.
_LABEL_RE = re.compile(r"^[a-z0-9_](?:[a-z0-9_-]*[a-z0-9_])?$")


def normalize_dns_name(raw: Union[str, DnsName]) -> DnsName:
    """
    Normalize a host name into its label form.

    The name is lowercased and one trailing dot is stripped. IDNs must already be in their punycode form.

    Parameters
    ----------
    raw : Union[str, DnsName]
        The host name; an already normalized name is returned unchanged.

    Returns
    -------
    DnsName
        The normalized name.

    Raises
    ------
    InvalidDnsNameError
        If the input is empty, contains characters outside the hostname alphabet, or exceeds label/name length limits.
    """
    if isinstance(raw, DnsName):
        return raw

    text = raw.strip()
    if text.endswith("."):
        text = text[:-1]
    if not text:
        raise InvalidDnsNameError(raw, "empty name")
    if not text.isascii():
        raise InvalidDnsNameError(raw, "non-ASCII characters (use the punycode form)")

    text = text.lower()
    if len(text) > MAX_NAME_OCTETS:
        raise InvalidDnsNameError(raw, f"longer than {MAX_NAME_OCTETS} octets")

    labels = tuple(text.split("."))
    for label in labels:
        if not label:
            raise InvalidDnsNameError(raw, "empty label")
        if len(label) > MAX_LABEL_OCTETS:
            raise InvalidDnsNameError(raw, f"label {label!r} longer than {MAX_LABEL_OCTETS} octets")
        if not _LABEL_RE.match(label):
            raise InvalidDnsNameError(raw, f"illegal characters in label {label!r}")

    return DnsName(labels)


def normalize_san_pattern(raw: str) -> str:
    """
    Normalize a SAN DNS pattern.

    Parameters
    ----------
    raw : str
        A literal host name or a wildcard pattern ``*.rest``.

    Returns
    -------
    str
        The lowercase pattern without trailing dot.

    Raises
    ------
    InvalidDnsNameError
        If the wildcard is anything but the entire leftmost label, or the literal part is not a valid name.
    """
    text = raw.strip()
    if text.startswith("*."):
        rest = normalize_dns_name(text[2:])
        return f"*.{rest}"
    if "*" in text:
        raise InvalidDnsNameError(raw, "a wildcard may only be the entire leftmost label")
    return str(normalize_dns_name(text))


def split_san_patterns(raw_names: Iterable[str]) -> Tuple[Tuple[str, ...], int]:
    """
    Normalize a SAN list, dropping IP address entries.

    Parameters
    ----------
    raw_names : Iterable[str]
        SAN entries as found in a trace.

    Returns
    -------
    Tuple[Tuple[str, ...], int]
        The de-duplicated DNS patterns in first-seen order, and the number of IP SANs that were ignored.
    """
    patterns: List[str] = []
    ignored_ips = 0
    for raw in raw_names:
        if _is_ip_literal(raw):
            ignored_ips += 1
            continue
        pattern = normalize_san_pattern(raw)
        if pattern not in patterns:
            patterns.append(pattern)
    return tuple(patterns), ignored_ips


def origin_of(url: Union[str, SplitResult]) -> Origin:
    """
    Return the https origin of a URL.

    Parameters
    ----------
    url : Union[str, SplitResult]
        The URL, either as text or already split.

    Returns
    -------
    Origin
        The origin with normalized host; the port defaults to 443.

    Raises
    ------
    UnsupportedSchemeError
        If the scheme is not https.
    InvalidDnsNameError
        If the URL has no valid host or an invalid port.
    """
    parts = urlsplit(url) if isinstance(url, str) else url
    if parts.scheme.lower() != "https":
        raise UnsupportedSchemeError(parts.geturl())
    if not parts.hostname:
        raise InvalidDnsNameError(parts.geturl(), "URL has no host")

    try:
        port = parts.port
    except ValueError as exc:
        raise InvalidDnsNameError(parts.geturl(), "invalid port") from exc

    return Origin(host=normalize_dns_name(parts.hostname), port=port or HTTPS_DEFAULT_PORT)


def parse_ip(raw: str) -> IPAddress:
    """Parse an IP literal, accepting bracketed IPv6 (``[::1]``)."""
    return ipaddress.ip_address(raw.strip().strip("[]"))


def parse_endpoint(raw: str, default_port: Optional[int] = None) -> Endpoint:
    """
    Parse ``ip:port``, ``[v6]:port`` or a bare IP (with `default_port`) into an endpoint.

    Raises
    ------
    ValueError
        If the address or port does not parse.
    """
    text = raw.strip()
    if text.startswith("["):
        host, _, port_text = text[1:].partition("]")
        port_text = port_text.lstrip(":")
    elif text.count(":") == 1:
        host, _, port_text = text.partition(":")
    else:
        host, port_text = text, ""

    if not port_text:
        if default_port is None:
            raise ValueError(f"Endpoint {raw!r} has no port")
        port = default_port
    else:
        port = int(port_text)
    return make_endpoint(parse_ip(host), port)


def make_endpoint(ip: IPAddress, port: int) -> Endpoint:
    """Build an endpoint after checking the port range."""
    if not 1 <= port <= 65535:
        raise ValueError(f"Port {port} out of range")
    return Endpoint(ip=ip, port=port)


def normalize_page_url(url: str) -> str:
    """
    Normalize a page URL for matching the same site across corpora.

    The scheme, default ports, a leading ``www.``, query, fragment and trailing slashes are dropped; the host is
    lowercased.
    """
    parts = urlsplit(url if "://" in url else f"https://{url}")
    host = (parts.hostname or "").lower().rstrip(".")
    if host.startswith("www."):
        host = host[4:]
    try:
        port = parts.port
    except ValueError:
        port = None
    netloc = host if port in (None, 80, 443) else f"{host}:{port}"
    return f"{netloc}{parts.path.rstrip('/')}"


def _is_ip_literal(raw: str) -> bool:
    try:
        parse_ip(raw)
    except ValueError:
        return False
    return True
