"""Tests for building certificates from trace fields and PEM chains."""

import pytest

from h2coalesce.utils.cert_utils import (
    UNKNOWN_ISSUER,
    CertificateDecodeError,
    certificate_from_fields,
    certificate_from_pem_chain,
)
from tests.factories import make_pem


def test_certificate_from_fields() -> None:
    decoded = certificate_from_fields(["WWW.Example.com", "*.cdn.example.com", "192.0.2.1"], "Let's Encrypt")

    assert decoded.certificate.san_dns_names == ("www.example.com", "*.cdn.example.com")
    assert decoded.certificate.issuer_org == "Let's Encrypt"
    assert decoded.ignored_ip_sans == 1


def test_certificate_from_fields_without_issuer() -> None:
    assert certificate_from_fields(["a.test"], None).certificate.issuer_org == UNKNOWN_ISSUER


@pytest.mark.parametrize("sans", [[], ["192.0.2.1"], ["bad*name.test"]])
def test_certificate_from_fields_rejects(sans: list) -> None:
    with pytest.raises(CertificateDecodeError):
        certificate_from_fields(sans, "CA")


def test_certificate_from_pem_chain_reads_leaf() -> None:
    leaf = make_pem(("www.example.com", "*.example.com"), "Example Trust", ip_sans=("192.0.2.7",))
    other = make_pem(("unrelated.test",), "Other CA")

    decoded = certificate_from_pem_chain([leaf, other])

    assert decoded.certificate.san_dns_names == ("www.example.com", "*.example.com")
    assert decoded.certificate.issuer_org == "Example Trust"
    assert decoded.certificate.subject_cn == "www.example.com"
    assert decoded.ignored_ip_sans == 1


def test_certificate_from_pem_chain_accepts_single_string() -> None:
    decoded = certificate_from_pem_chain(make_pem(("a.test",), "CA One"))
    assert decoded.certificate.san_dns_names == ("a.test",)


def test_certificate_from_pem_chain_without_issuer_org() -> None:
    decoded = certificate_from_pem_chain([make_pem(("a.test",), None)])
    assert decoded.certificate.issuer_org == UNKNOWN_ISSUER


@pytest.mark.parametrize("chain", [[], [""], ["-----BEGIN CERTIFICATE-----\nnot base64\n-----END CERTIFICATE-----\n"]])
def test_certificate_from_pem_chain_rejects(chain: list) -> None:
    with pytest.raises(CertificateDecodeError):
        certificate_from_pem_chain(chain)
