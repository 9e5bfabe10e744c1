"""Main entry points for analyzing a corpus of traces and re-reporting analyzed corpora."""

import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

from h2coalesce.classify import analyze_page
from h2coalesce.config import HAR_FIELDS_FILE, HAR_SUFFIXES, NETLOG_SUFFIXES
from h2coalesce.ingest_har import ingest_har_path
from h2coalesce.ingest_netlog import ingest_netlog_path
from h2coalesce.output_formatters import PAGES_TABLE, PageRecordWriter, output_stem, read_page_records, write_report
from h2coalesce.poolsim import PoolPolicy, simulate_pool
from h2coalesce.report import CorpusAggregator, intersect_corpora, to_page_record
from h2coalesce.schemas.config_schema import HarFieldMap, ReportConfig, RunConfig
from h2coalesce.schemas.finding_schema import FetchMode
from h2coalesce.schemas.report_schema import CorpusReport, PageRecord
from h2coalesce.schemas.timeline_schema import MEASURED, DurationModel
from h2coalesce.utils.asn_utils import Ip2AsnMap
from h2coalesce.utils.file_utils import collect_inputs

logger = logging.getLogger(__name__)

PAGES_SUFFIX = f"_{PAGES_TABLE}.ndjson"

_Job = Tuple[Path, str, Optional[DurationModel], FetchMode, Optional[HarFieldMap], bool]


def analyze_file(job: _Job) -> List[PageRecord]:
    """
    Ingest, classify and simulate every page of one trace file.

    Module-level so that worker processes can run it.

    Parameters
    ----------
    job : _Job
        File path, input kind, duration model, fetch mode, HAR field map and the pool's credentials partitioning.

    Returns
    -------
    List[PageRecord]
        One record per page, in page order.
    """
    path, kind, model, fetch_mode, fields, partitioning = job
    if kind == "netlog":
        timelines = ingest_netlog_path(path)
    else:
        timelines = ingest_har_path(path, model or DurationModel.ENDLESS, fields)

    policy = PoolPolicy(credentials_partitioning=partitioning)
    records = []
    for timeline in timelines:
        findings = analyze_page(timeline, fetch_mode)
        sim = simulate_pool(timeline, policy)
        records.append(to_page_record(findings, sim, timeline, policy, source=str(path)))
    logger.info("%s: %d pages", path, len(records))
    return records


def _run_jobs(jobs: Sequence[_Job], workers: int) -> Iterator[List[PageRecord]]:
    if workers <= 1 or len(jobs) <= 1:
        yield from map(analyze_file, jobs)
        return
    with ProcessPoolExecutor(max_workers=workers) as executor:
        # map yields in submission order whatever the completion order.
        yield from executor.map(analyze_file, jobs)


def _load_ip2asn(path: Optional[Path]) -> Optional[Ip2AsnMap]:
    return Ip2AsnMap.from_file(path) if path is not None else None


def analyze_corpus(config: RunConfig) -> Tuple[CorpusReport, List[Path]]:
    """
    Analyze every trace file of a run and write its page records, findings and report.

    Files are processed in sorted path order; with several workers, results are still consumed in that order, so
    outputs do not depend on the worker count. Only the aggregator state is kept across files.

    Parameters
    ----------
    config : RunConfig
        Run configuration.

    Returns
    -------
    Tuple[CorpusReport, List[Path]]
        The corpus report and every file written.

    Raises
    ------
    TraceParseError
        If a file is not a trace of the configured kind.
    FileNotFoundError
        If an input path does not exist.
    """
    suffixes = NETLOG_SUFFIXES if config.kind == "netlog" else HAR_SUFFIXES
    files = collect_inputs(config.inputs, suffixes)
    har_fields_path = config.har_fields or HAR_FIELDS_FILE
    fields = HarFieldMap.from_toml(har_fields_path) if har_fields_path is not None else None
    model = config.effective_model
    model_label = model.value if model is not None else MEASURED
    ip2asn = _load_ip2asn(config.ip2asn)
    logger.info("Analyzing %d %s files with %d workers", len(files), config.kind, config.workers)

    jobs = [(path, config.kind, model, config.fetch_mode, fields, config.pool_partitioning) for path in files]
    aggregator = CorpusAggregator(config.corpus, top_n=config.top_n, ip2asn=ip2asn)
    stem = output_stem(config.corpus, model_label, config.fetch_mode.value)
    with PageRecordWriter(config.output_dir, stem) as writer:
        for records in _run_jobs(jobs, config.workers):
            for record in records:
                writer.write(record)
                aggregator.add(record)
        written = [writer.pages_path, writer.findings_path]

    report = aggregator.result()
    if report.model is None:
        report = report.model_copy(update={"model": model_label, "fetch_mode": config.fetch_mode.value})
    written += write_report(report, config.output_dir, stem, config.output_format)
    return report, written


def corpus_name_of(path: Path) -> str:
    """Recover the corpus name from a ``<corpus>_<model>_<mode>_pages.ndjson`` file name."""
    name = path.name
    if name.endswith(PAGES_SUFFIX):
        name = name[: -len(PAGES_SUFFIX)]
        parts = name.rsplit("_", 2)
        if len(parts) == 3:
            return parts[0]
    return path.stem


def _page_files(paths: Iterable[Path]) -> List[Path]:
    return collect_inputs(paths, (PAGES_SUFFIX,))


def _read_pages(files: Sequence[Path]) -> Iterator[PageRecord]:
    for path in files:
        yield from read_page_records(path)


def report_corpora(config: ReportConfig) -> Tuple[List[CorpusReport], List[Path]]:
    """
    Rebuild reports from page records written by an earlier analysis.

    All input files form one corpus, named after the first file. With `config.intersect`, both corpora are
    restricted to their shared pages and written with an ``_overlap`` suffix on their names.

    Returns
    -------
    Tuple[List[CorpusReport], List[Path]]
        One report (two with an intersection) and every file written.

    Raises
    ------
    ConfigurationError
        If the records mix duration models or fetch modes.
    """
    ip2asn = _load_ip2asn(config.ip2asn)
    files = _page_files(config.inputs)
    corpus = corpus_name_of(files[0]) if files else "corpus"

    if not config.intersect:
        aggregator = CorpusAggregator(corpus, top_n=config.top_n, ip2asn=ip2asn)
        for page in _read_pages(files):
            aggregator.add(page)
        report = aggregator.result()
        stem = output_stem(corpus, report.model, report.fetch_mode)
        return [report], write_report(report, config.output_dir, stem, config.output_format)

    other_files = _page_files(config.intersect)
    other = corpus_name_of(other_files[0]) if other_files else "other"
    if other == corpus:
        other = f"{other}_b"
    pages_a = list(_read_pages(files))
    pages_b = list(_read_pages(other_files))
    reports = intersect_corpora(
        pages_a,
        pages_b,
        names=(f"{corpus}_overlap", f"{other}_overlap"),
        top_n=config.top_n,
        ip2asn=ip2asn,
    )
    written: List[Path] = []
    labelled = []
    for report, pages in zip(reports, (pages_a, pages_b)):
        if report.model is None and pages:
            report = report.model_copy(update={"model": pages[0].model, "fetch_mode": pages[0].fetch_mode})
        stem = output_stem(report.corpus, report.model, report.fetch_mode)
        written += write_report(report, config.output_dir, stem, config.output_format)
        labelled.append(report)
    return labelled, written
