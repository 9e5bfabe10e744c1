"""Utility functions for locating and reading trace files."""

import gzip
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

GZIP_MAGIC = b"\x1f\x8b"


def get_preferred_encodings() -> List[str]:
    """
    Get list of encodings to try when decoding a trace document.

    Returns
    -------
    List[str]
        Encoding names in priority order. HAR and NetLog are specified as UTF-8; the BOM and UTF-16 variants cover
        files re-saved by editors on Windows.
    """
    return ["utf-8", "utf-8-sig", "utf-16"]


def maybe_decompress(document: bytes) -> bytes:
    """Return `document` gunzipped if it starts with the gzip magic bytes, unchanged otherwise."""
    if document[:2] == GZIP_MAGIC:
        return gzip.decompress(document)
    return document


def decode_text(document: bytes) -> str:
    """
    Decode a (decompressed) trace document.

    Raises
    ------
    UnicodeDecodeError
        If no preferred encoding decodes the document.
    """
    last_error: Optional[UnicodeDecodeError] = None
    for enc in get_preferred_encodings():
        try:
            text = document.decode(enc)
        except UnicodeDecodeError as exc:
            last_error = exc
            continue
        return text.lstrip("\ufeff")
    assert last_error is not None
    raise last_error


def collect_inputs(paths: Iterable[Path], suffixes: Tuple[str, ...]) -> List[Path]:
    """
    Expand input paths into a sorted, de-duplicated list of trace files.

    Directories are searched recursively for files ending in one of `suffixes`; files named explicitly are taken
    whatever their suffix.

    Parameters
    ----------
    paths : Iterable[Path]
        Files and directories given on the command line.
    suffixes : Tuple[str, ...]
        Accepted file name endings for directory members.

    Returns
    -------
    List[Path]
        The files in sorted order, so that results do not depend on directory listing order.

    Raises
    ------
    FileNotFoundError
        If a path does not exist.
    """
    found = set()
    for path in paths:
        if path.is_dir():
            found.update(p for p in path.rglob("*") if p.is_file() and p.name.lower().endswith(suffixes))
        elif path.is_file():
            found.add(path)
        else:
            raise FileNotFoundError(f"Input {path} does not exist")
    return sorted(found)
