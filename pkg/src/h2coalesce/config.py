"""Configuration file for the project."""

import logging
import os
from pathlib import Path
from typing import Dict, Optional, Union

from dotenv import load_dotenv

# Environment overrides may come from a .env file
load_dotenv()

# Set up logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

# Analysis Configuration
OUTPUT_DIR = Path(os.environ.get("H2COALESCE_OUTPUT_DIR", "h2coalesce-out"))
DEFAULT_TOP_N = int(os.environ.get("H2COALESCE_TOP_N", 10))
DEFAULT_WORKERS = int(os.environ.get("H2COALESCE_WORKERS", 1))
DEFAULT_CORPUS_NAME = "corpus"

# HAR / NetLog ingestion
HAR_SUFFIXES = (".har", ".har.gz")
NETLOG_SUFFIXES = (".json", ".json.gz", ".netlog", ".netlog.gz")
HAR_FIELDS_FILE: Optional[Path] = (
    Path(os.environ["H2COALESCE_HAR_FIELDS"]) if os.environ.get("H2COALESCE_HAR_FIELDS") else None
)
NETLOG_EVENTS_FILE = Path(
    os.environ.get("H2COALESCE_NETLOG_EVENTS", Path(__file__).resolve().parent / "netlog_events.toml")
)
HTTPS_DEFAULT_PORT = 443

# DNS probe Configuration
DNS_INTERVAL_S = float(os.environ.get("H2COALESCE_DNS_INTERVAL_S", 6 * 60))
DNS_TIMEOUT_S = float(os.environ.get("H2COALESCE_DNS_TIMEOUT_S", 2.0))

# Output
FLOAT_DIGITS = 6
UNMAPPED_ASN = "UNMAPPED"
STREAM_LIMIT_ASSUMPTION = "HTTP/2 concurrent stream limits are not modeled; coalesced requests are assumed to fit."

# Published corpus-scale figures, emitted next to every summary for comparison only.
PUBLISHED_REFERENCE_FIGURES: Dict[str, Union[int, float]] = {
    "har_http2_sites": 5_883_212,
    "har_endless_redundant_sites": 4_493_097,
    "har_immediate_redundant_sites": 2_263_751,
    "alexa_measured_redundant_sites": 77_878,
    "alexa_endless_redundant_sites": 77_898,
    "alexa_closed_connection_fraction": 0.035,
    "alexa_median_closed_lifetime_s": 122.2,
}
