"""
Fixtures for tests.

This file provides the worked-example timeline, writers for HAR and NetLog files, and the resolver fixture files
used by the DNS probe tests. The builders themselves live in `tests.factories`.
"""

import json
from pathlib import Path
from typing import Any, Callable, Dict, Sequence

import pytest

from h2coalesce.schemas.timeline_schema import SessionTimeline
from tests.factories import (
    DOMAINS_TXT,
    RESOLVERS_TSV,
    har_document,
    make_timeline,
    scripted_resolver_fixture,
    worked_example,
    worked_example_har,
)

WriteHarFunc = Callable[[str, Sequence[Dict[str, Any]]], Path]
WriteJsonFunc = Callable[[str, Dict[str, Any]], Path]


@pytest.fixture
def worked_timeline() -> SessionTimeline:
    """
    Provide the four-connection worked example with every connection open until the end of the page.

    Returns
    -------
    SessionTimeline
        Connections #1 to #4 on one endpoint with certificates A, B, A, B.
    """
    return make_timeline(worked_example())


@pytest.fixture
def write_json(tmp_path: Path) -> WriteJsonFunc:
    """
    Provide a helper function writing a JSON document below the temporary directory.

    Parameters
    ----------
    tmp_path : Path
        The temporary directory path provided by the `tmp_path` fixture.

    Returns
    -------
    WriteJsonFunc
        A callable taking a relative file name and the document, returning the written path.
    """

    def _write_json(name: str, content: Dict[str, Any]) -> Path:
        path = tmp_path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open(mode="w", encoding="utf-8") as f:
            json.dump(content, f)
        return path

    return _write_json


@pytest.fixture
def write_har(write_json: WriteJsonFunc) -> WriteHarFunc:
    """Provide a helper function writing a one-page HAR file made of the given entries."""

    def _write_har(name: str, entries: Sequence[Dict[str, Any]]) -> Path:
        return write_json(name, har_document(entries))

    return _write_har


@pytest.fixture
def worked_har_dir(tmp_path: Path, write_json: WriteJsonFunc) -> Path:
    """
    Provide a corpus directory holding the worked example as a single HAR file.

    Returns
    -------
    Path
        The directory to pass to ``h2coalesce analyze``.
    """
    write_json("corpus/page.har", worked_example_har())
    return tmp_path / "corpus"


@pytest.fixture
def probe_files(tmp_path: Path, write_json: WriteJsonFunc) -> Dict[str, Path]:
    """
    Provide the resolver list, domain list and scripted answers of a three-resolver, ten-slot probe.

    Returns
    -------
    Dict[str, Path]
        Paths under the keys ``resolvers``, ``domains`` and ``scripted``.
    """
    resolvers = tmp_path / "resolvers.tsv"
    resolvers.write_text(RESOLVERS_TSV, encoding="utf-8")
    domains = tmp_path / "domains.txt"
    domains.write_text(DOMAINS_TXT, encoding="utf-8")
    scripted = write_json("scripted.json", scripted_resolver_fixture())
    return {"resolvers": resolvers, "domains": domains, "scripted": scripted}
