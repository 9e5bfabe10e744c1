"""Functions to write and read page records, findings, report tables and the summary document."""

import csv
import json
import logging
from pathlib import Path
from types import TracebackType
from typing import IO, Any, Dict, Iterator, List, Mapping, Optional, Sequence, Type

from pydantic import ValidationError

from h2coalesce.report import table_rows
from h2coalesce.schemas.report_schema import (
    AsnRow,
    CauseRow,
    CdfPoint,
    CertDomainRow,
    CorpusReport,
    IpOriginRow,
    IssuerRow,
    PageRecord,
)
from h2coalesce.utils.exceptions import TraceParseError

logger = logging.getLogger(__name__)

TABLE_COLUMNS: Dict[str, List[str]] = {
    "causes": list(CauseRow.model_fields),
    "cdf": list(CdfPoint.model_fields),
    "ip_origins": list(IpOriginRow.model_fields),
    "cert_issuers": list(IssuerRow.model_fields),
    "cert_domains": list(CertDomainRow.model_fields),
    "issuer_market_share": list(IssuerRow.model_fields),
    "asn": list(AsnRow.model_fields),
}

PAGES_TABLE = "pages"
FINDINGS_TABLE = "findings"
SUMMARY_TABLE = "summary"


def output_stem(corpus: str, model: Optional[str], fetch_mode: Optional[str]) -> str:
    """Return the ``<corpus>_<model>_<mode>`` prefix shared by every file of one run."""
    return f"{corpus}_{model or 'none'}_{fetch_mode or 'none'}"


def format_summary(report: CorpusReport) -> str:
    """
    Render the summary document.

    Keys are sorted at every level, so equal reports render to identical text.
    """
    return json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def format_summary_line(report: CorpusReport) -> str:
    """One-line digest of a report for the terminal."""
    causes = " ".join(f"{row.cause}={row.connections}" for row in report.causes)
    return (
        f"{report.corpus}: pages={report.pages} sites={report.sites} connections={report.total_connections} "
        f"redundant={report.redundant_connections} redundant_sites={report.redundant_sites} {causes}"
    )


def write_summary(report: CorpusReport, output_dir: Path, stem: str) -> Path:
    """Write ``<stem>_summary.json`` and return its path."""
    path = output_dir / f"{stem}_{SUMMARY_TABLE}.json"
    path.write_text(format_summary(report), encoding="utf-8")
    return path


def write_table(name: str, rows: Sequence[Mapping[str, Any]], path: Path, output_format: str = "csv") -> Path:
    """
    Write one table as CSV (with a header row, even when empty) or as NDJSON.

    Parameters
    ----------
    name : str
        Table name, selecting the column order.
    rows : Sequence[Mapping[str, Any]]
        Table rows.
    path : Path
        Destination file.
    output_format : str
        ``csv`` or ``ndjson``.

    Returns
    -------
    Path
        `path`.
    """
    columns = TABLE_COLUMNS[name]
    with path.open("w", encoding="utf-8", newline="") as f:
        if output_format == "ndjson":
            for row in rows:
                f.write(json.dumps({c: row.get(c) for c in columns}, sort_keys=True) + "\n")
        else:
            writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({c: row.get(c) for c in columns})
    return path


def write_tables(report: CorpusReport, output_dir: Path, stem: str, output_format: str = "csv") -> List[Path]:
    """Write every table of `report` as ``<stem>_<table>.<format>`` and return the paths in name order."""
    suffix = "ndjson" if output_format == "ndjson" else "csv"
    paths = []
    for name, rows in sorted(table_rows(report).items()):
        paths.append(write_table(name, rows, output_dir / f"{stem}_{name}.{suffix}", output_format))
    return paths


def write_report(report: CorpusReport, output_dir: Path, stem: str, output_format: str = "csv") -> List[Path]:
    """Write the summary and all tables of a report."""
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = [write_summary(report, output_dir, stem), *write_tables(report, output_dir, stem, output_format)]
    logger.info("Wrote %d report files with prefix %s", len(paths), output_dir / stem)
    return paths


class PageRecordWriter:
    """
    Append page records to ``<stem>_pages.ndjson`` and their findings to ``<stem>_findings.ndjson``.

    Use as a context manager; records are written in the order they are given.
    """

    def __init__(self, output_dir: Path, stem: str) -> None:
        self.pages_path = output_dir / f"{stem}_{PAGES_TABLE}.ndjson"
        self.findings_path = output_dir / f"{stem}_{FINDINGS_TABLE}.ndjson"
        self._output_dir = output_dir
        self._pages: Optional[IO[str]] = None
        self._findings: Optional[IO[str]] = None

    def __enter__(self) -> "PageRecordWriter":
        self._output_dir.mkdir(parents=True, exist_ok=True)
        self._pages = self.pages_path.open("w", encoding="utf-8")
        self._findings = self.findings_path.open("w", encoding="utf-8")
        return self

    def __exit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc: Optional[BaseException],
        tb: Optional[TracebackType],
    ) -> None:
        for handle in (self._pages, self._findings):
            if handle is not None:
                handle.close()

    def write(self, page: PageRecord) -> None:
        """Append one page and its findings."""
        assert self._pages is not None and self._findings is not None, "writer used outside its context"
        self._pages.write(page.model_dump_json() + "\n")
        for finding in page.findings:
            self._findings.write(finding.model_dump_json() + "\n")


def read_page_records(path: Path) -> Iterator[PageRecord]:
    """
    Stream the page records of a ``*_pages.ndjson`` file.

    Raises
    ------
    TraceParseError
        If a line is not a valid page record; the offset is the byte position of that line.
    """
    offset = 0
    with path.open("rb") as f:
        for raw in f:
            line = raw.strip()
            if line:
                try:
                    yield PageRecord.model_validate_json(line)
                except ValidationError as exc:
                    message = f"not a page record ({exc.error_count()} errors)"
                    raise TraceParseError(str(path), message, offset) from exc
            offset += len(raw)
