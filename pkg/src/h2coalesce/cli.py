"""Command-line interface for the h2coalesce package."""

# pylint: disable=no-value-for-parameter

from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Optional, Tuple

import click

from h2coalesce.config import (
    DEFAULT_CORPUS_NAME,
    DEFAULT_TOP_N,
    DEFAULT_WORKERS,
    DNS_INTERVAL_S,
    DNS_TIMEOUT_S,
    OUTPUT_DIR,
)
from h2coalesce.dnsprobe import run_probe
from h2coalesce.entrypoint import analyze_corpus, report_corpora
from h2coalesce.ingest_netlog import load_event_mapping
from h2coalesce.output_formatters import format_summary_line
from h2coalesce.schemas.config_schema import ProbeConfig, ReportConfig, RunConfig
from h2coalesce.schemas.finding_schema import FetchMode
from h2coalesce.schemas.timeline_schema import DurationModel
from h2coalesce.utils.exceptions import handle_exceptions

PATH = click.Path(path_type=Path)
EXISTING_FILE = click.Path(path_type=Path, exists=True, dir_okay=False)


def _tool_version() -> str:
    try:
        return version("h2coalesce")
    except PackageNotFoundError:
        return "unknown"


def _print_version(ctx: click.Context, _param: click.Parameter, value: bool) -> None:
    if not value or ctx.resilient_parsing:
        return
    click.echo(f"h2coalesce {_tool_version()} (netlog mapping {load_event_mapping().version})")
    ctx.exit()


def _parse_pairs(_ctx: click.Context, _param: click.Parameter, value: Tuple[str, ...]) -> Tuple[Tuple[str, str], ...]:
    pairs = []
    for raw in value:
        a, sep, b = raw.partition(",")
        if not sep or not a.strip() or not b.strip():
            raise click.BadParameter(f"{raw!r} is not a pair of the form a,b")
        pairs.append((a.strip(), b.strip()))
    return tuple(pairs)


@click.group()
@click.option(
    "--version",
    is_flag=True,
    expose_value=False,
    is_eager=True,
    callback=_print_version,
    help="Print the tool version and the NetLog mapping version.",
)
def main() -> None:
    """Find redundant HTTP/2 connections in page-load traces and explain why they were opened."""


@main.command()
@click.argument("inputs", nargs=-1, type=PATH)
@click.option("--kind", type=click.Choice(["har", "netlog"]), default="har", show_default=True, help="Trace format")
@click.option(
    "--model",
    type=click.Choice([m.value for m in DurationModel]),
    default=None,
    help="Duration model for HAR inputs (endless by default); rejected for NetLog inputs",
)
@click.option(
    "--fetch",
    "fetch_mode",
    type=click.Choice([m.value for m in FetchMode]),
    default=FetchMode.FOLLOW.value,
    show_default=True,
    help="Honor (follow) or disregard (ignore) credentials partitioning",
)
@click.option("--top", "top_n", type=int, default=DEFAULT_TOP_N, show_default=True, help="Rows per ranked table")
@click.option("--format", "output_format", type=click.Choice(["csv", "ndjson"]), default="csv", show_default=True)
@click.option("--ip2asn", type=EXISTING_FILE, default=None, help="prefix<TAB>asn<TAB>name file for the ASN table")
@click.option("--output-dir", "-o", type=PATH, default=OUTPUT_DIR, show_default=True, help="Directory for outputs")
@click.option("--workers", "-w", type=int, default=DEFAULT_WORKERS, show_default=True, help="Worker processes")
@click.option("--corpus", default=DEFAULT_CORPUS_NAME, show_default=True, help="Corpus name used in file names")
@click.option("--har-fields", type=EXISTING_FILE, default=None, help="TOML file overriding HAR field paths")
@click.option(
    "--no-partitioning",
    is_flag=True,
    default=False,
    help="Let the pool simulation ignore credentials partitioning",
)
@handle_exceptions()
def analyze(
    inputs: Tuple[Path, ...],
    kind: str,
    model: Optional[str],
    fetch_mode: str,
    top_n: int,
    output_format: str,
    ip2asn: Optional[Path],
    output_dir: Path,
    workers: int,
    corpus: str,
    har_fields: Optional[Path],
    no_partitioning: bool,
) -> None:
    """
    Classify the HTTP/2 connections of every page in INPUTS and write findings and report tables.

    Parameters
    ----------
    inputs : Tuple[Path, ...]
        Trace files or directories searched recursively.
    kind : str
        ``har`` or ``netlog``.
    model : str, optional
        Duration model for HAR inputs.
    fetch_mode : str
        ``follow`` or ``ignore``.
    top_n : int
        Rows per ranked table.
    output_format : str
        ``csv`` or ``ndjson`` tables.
    ip2asn : Path, optional
        Prefix-to-AS mapping for the ASN table.
    output_dir : Path
        Where outputs go.
    workers : int
        Number of worker processes.
    corpus : str
        Corpus name.
    har_fields : Path, optional
        HAR field-map overrides.
    no_partitioning : bool
        Disable credentials partitioning in the pool simulation.
    """
    config = RunConfig.create(
        inputs=inputs,
        kind=kind,
        model=DurationModel(model) if model else None,
        fetch_mode=FetchMode(fetch_mode),
        ip2asn=ip2asn,
        output_dir=output_dir,
        top_n=top_n,
        workers=workers,
        corpus=corpus,
        output_format=output_format,
        har_fields=har_fields,
        pool_partitioning=not no_partitioning,
    )
    report, written = analyze_corpus(config)
    click.echo(format_summary_line(report))
    click.echo(f"Wrote {len(written)} files to {config.output_dir}")


@main.command()
@click.argument("inputs", nargs=-1, required=True, type=PATH)
@click.option("--intersect", multiple=True, type=PATH, help="Pages files of a second corpus to intersect with")
@click.option("--ip2asn", type=EXISTING_FILE, default=None, help="prefix<TAB>asn<TAB>name file")
@click.option("--asn", is_flag=True, default=False, help="Require the ASN table (needs --ip2asn)")
@click.option("--top", "top_n", type=int, default=DEFAULT_TOP_N, show_default=True, help="Rows per ranked table")
@click.option("--format", "output_format", type=click.Choice(["csv", "ndjson"]), default="csv", show_default=True)
@click.option("--output-dir", "-o", type=PATH, default=OUTPUT_DIR, show_default=True, help="Directory for outputs")
@handle_exceptions()
def report(
    inputs: Tuple[Path, ...],
    intersect: Tuple[Path, ...],
    ip2asn: Optional[Path],
    asn: bool,
    top_n: int,
    output_format: str,
    output_dir: Path,
) -> None:
    """Rebuild report tables from the ``*_pages.ndjson`` files of earlier analyze runs."""
    config = ReportConfig.create(
        inputs=inputs,
        intersect=intersect,
        ip2asn=ip2asn,
        asn=asn,
        output_dir=output_dir,
        top_n=top_n,
        output_format=output_format,
    )
    reports, written = report_corpora(config)
    for item in reports:
        click.echo(format_summary_line(item))
    click.echo(f"Wrote {len(written)} files to {config.output_dir}")


@main.command()
@click.option("--resolvers", required=True, type=EXISTING_FILE, help="ip<TAB>label per line")
@click.option("--domains", required=True, type=EXISTING_FILE, help="One domain per line")
@click.option("--interval", "interval_s", type=float, default=DNS_INTERVAL_S, show_default=True, help="Round gap (s)")
@click.option("--duration", "duration_s", type=float, default=0, show_default=True, help="Seconds to keep probing")
@click.option("--timeout", "timeout_s", type=float, default=DNS_TIMEOUT_S, show_default=True, help="Deadline (s)")
@click.option("--scripted", type=EXISTING_FILE, default=None, help="Replay a JSON resolver fixture offline")
@click.option("--check-ecs", is_flag=True, default=False, help="Warn about resolvers supporting client-subnet")
@click.option("--pair", "pairs", multiple=True, callback=_parse_pairs, help="Domain pair a,b (default: all pairs)")
@click.option("--output-dir", "-o", type=PATH, default=OUTPUT_DIR, show_default=True, help="Directory for outputs")
@click.option("--name", default="dnsprobe", show_default=True, help="Prefix of the output files")
@handle_exceptions()
def dnsprobe(
    resolvers: Path,
    domains: Path,
    interval_s: float,
    duration_s: float,
    timeout_s: float,
    scripted: Optional[Path],
    check_ecs: bool,
    pairs: Tuple[Tuple[str, str], ...],
    output_dir: Path,
    name: str,
) -> None:
    """Resolve DOMAINS through RESOLVERS on a schedule and write per-pair resolver overlap series."""
    config = ProbeConfig.create(
        resolvers=resolvers,
        domains=domains,
        interval_s=interval_s,
        duration_s=duration_s,
        timeout_s=timeout_s,
        scripted=scripted,
        check_ecs=check_ecs,
        pairs=pairs,
        output_dir=output_dir,
        name=name,
    )
    for series in run_probe(config):
        click.echo(f"{series.domain_a} {series.domain_b}: {len(series.points)} slots, {series.skipped} skipped")


if __name__ == "__main__":
    main()
