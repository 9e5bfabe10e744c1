"""h2coalesce: find redundant HTTP/2 connections in page-load traces and explain why they were opened."""

from h2coalesce.classify import analyze_page, classify_connection, reuse_verdict, san_covers
from h2coalesce.entrypoint import analyze_corpus, report_corpora
from h2coalesce.ingest_har import ingest_har_path
from h2coalesce.ingest_netlog import ingest_netlog_path
from h2coalesce.poolsim import PoolPolicy, simulate_pool
from h2coalesce.report import aggregate_corpus

__all__ = [
    "analyze_page",
    "classify_connection",
    "reuse_verdict",
    "san_covers",
    "analyze_corpus",
    "report_corpora",
    "ingest_har_path",
    "ingest_netlog_path",
    "PoolPolicy",
    "simulate_pool",
    "aggregate_corpus",
]
