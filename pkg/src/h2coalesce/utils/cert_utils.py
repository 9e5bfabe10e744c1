"""Utilities for turning certificate data found in traces into `Certificate` objects."""

import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Union

from cryptography import x509
from cryptography.x509.oid import ExtensionOID, NameOID

from h2coalesce.schemas.trace_schema import Certificate
from h2coalesce.utils.exceptions import InvalidDnsNameError
from h2coalesce.utils.name_utils import split_san_patterns

logger = logging.getLogger(__name__)

UNKNOWN_ISSUER = "(unknown issuer)"


class CertificateDecodeError(ValueError):
    """Raised when certificate material is present but cannot be decoded."""


@dataclass(frozen=True)
class DecodedCertificate:
    """A certificate plus the count of IP SAN entries that were dropped while building it."""

    certificate: Certificate
    ignored_ip_sans: int = 0


def certificate_from_fields(
    san_names: Sequence[str],
    issuer_org: Optional[str],
    subject_cn: Optional[str] = None,
) -> DecodedCertificate:
    """
    Build a certificate from already extracted SAN names and issuer.

    Parameters
    ----------
    san_names : Sequence[str]
        SAN entries; IP literals are dropped and counted.
    issuer_org : str, optional
        Issuer organization.
    subject_cn : str, optional
        Subject common name.

    Returns
    -------
    DecodedCertificate
        The certificate and the ignored IP SAN count.

    Raises
    ------
    CertificateDecodeError
        If a SAN entry is not a valid DNS pattern or no DNS SAN remains.
    """
    try:
        patterns, ignored = split_san_patterns(san_names)
    except InvalidDnsNameError as exc:
        raise CertificateDecodeError(str(exc)) from exc
    if not patterns:
        raise CertificateDecodeError("certificate carries no DNS SAN entry")
    certificate = Certificate(issuer_org=issuer_org or UNKNOWN_ISSUER, san_dns_names=patterns, subject_cn=subject_cn)
    return DecodedCertificate(certificate=certificate, ignored_ip_sans=ignored)


def certificate_from_pem_chain(chain: Union[str, Iterable[str]]) -> DecodedCertificate:
    """
    Decode the leaf of a PEM certificate chain.

    Parameters
    ----------
    chain : Union[str, Iterable[str]]
        Either one string holding one or more concatenated PEM blocks, or a list of PEM strings (leaf first),
        as Chromium writes them into HAR `_certificates` and NetLog `SSL_CERTIFICATES_RECEIVED`.

    Returns
    -------
    DecodedCertificate
        The leaf certificate's issuer organization, subject CN and DNS SANs.

    Raises
    ------
    CertificateDecodeError
        If the chain is empty or the leaf does not decode.
    """
    blocks = [chain] if isinstance(chain, str) else list(chain)
    if not blocks or not str(blocks[0]).strip():
        raise CertificateDecodeError("empty certificate chain")

    try:
        leaf = x509.load_pem_x509_certificate(str(blocks[0]).encode("ascii"))
    except (ValueError, UnicodeEncodeError, TypeError) as exc:
        raise CertificateDecodeError(f"leaf certificate does not decode: {exc}") from exc

    issuer_org = _first_attribute(leaf.issuer, NameOID.ORGANIZATION_NAME)
    subject_cn = _first_attribute(leaf.subject, NameOID.COMMON_NAME)

    sans: List[str] = []
    try:
        san_ext = leaf.extensions.get_extension_for_oid(ExtensionOID.SUBJECT_ALTERNATIVE_NAME)
        sans.extend(san_ext.value.get_values_for_type(x509.DNSName))
        sans.extend(str(ip) for ip in san_ext.value.get_values_for_type(x509.IPAddress))
    except x509.ExtensionNotFound:
        pass

    return certificate_from_fields(sans, issuer_org, subject_cn)


def _first_attribute(name: x509.Name, oid: x509.ObjectIdentifier) -> Optional[str]:
    attrs = name.get_attributes_for_oid(oid)
    if not attrs:
        return None
    value = attrs[0].value
    return value.decode("utf-8", "replace") if isinstance(value, bytes) else str(value)
