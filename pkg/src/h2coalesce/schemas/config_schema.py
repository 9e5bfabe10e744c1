"""Pydantic models for run configuration and the HAR field map."""

from pathlib import Path
from typing import Any, Iterator, List, Literal, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from h2coalesce.config import (
    DEFAULT_CORPUS_NAME,
    DEFAULT_TOP_N,
    DEFAULT_WORKERS,
    DNS_INTERVAL_S,
    DNS_TIMEOUT_S,
    OUTPUT_DIR,
)
from h2coalesce.schemas.finding_schema import FetchMode
from h2coalesce.schemas.timeline_schema import DurationModel
from h2coalesce.utils.exceptions import ConfigurationError

try:
    import tomllib  # type: ignore[import]
except ImportError:
    import tomli as tomllib

InputKind = Literal["har", "netlog"]
OutputFormat = Literal["csv", "ndjson"]


class HarFieldMap(BaseModel):
    """
    Where each logical field lives inside a HAR entry.

    Each field maps to dotted candidate paths tried in order; the first path present in the entry wins.
    The defaults cover the WebPageTest / HTTP Archive custom fields and the Chrome DevTools export.
    """

    model_config = ConfigDict(extra="forbid")

    socket_id: List[str] = ["_socket", "connection"]
    request_id: List[str] = ["_request_id", "_requestId"]
    protocol: List[str] = ["_protocol", "response.httpVersion"]
    server_ip: List[str] = ["serverIPAddress", "_ip_addr"]
    server_port: List[str] = ["_server_port", "_port"]
    san_list: List[str] = ["_securityDetails.sanList", "response._securityDetails.sanList"]
    issuer_org: List[str] = ["_securityDetails.issuer", "response._securityDetails.issuer"]
    certificates: List[str] = ["_certificates", "response._certificates"]
    page_start: List[str] = ["startedDateTime"]

    @field_validator("*", mode="before")
    @classmethod
    def _single_path_as_list(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [value]
        return value

    def lookup(self, record: Mapping[str, Any], name: str) -> Any:
        """
        Return the value at the first candidate path of `name` present in `record`, or None.

        Parameters
        ----------
        record : Mapping[str, Any]
            A HAR entry or page object.
        name : str
            The logical field name.

        Returns
        -------
        Any
            The value, or None if no candidate path is present.
        """
        return next(self.values(record, name), None)

    def values(self, record: Mapping[str, Any], name: str) -> Iterator[Any]:
        """Yield the value of every candidate path of `name` present in `record`, in candidate order."""
        for path in getattr(self, name):
            value = _dig(record, path)
            if value is not None and value != "":
                yield value

    @classmethod
    def from_toml(cls, path: Path) -> "HarFieldMap":
        """
        Load overrides from a TOML file; fields absent from the file keep their defaults.

        The file either holds the fields at top level or under a ``[har_fields]`` table.

        Raises
        ------
        ConfigurationError
            If the file is not valid TOML or names unknown fields.
        """
        try:
            with path.open("rb") as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"Invalid TOML in {path}: {exc}") from exc

        section = data.get("har_fields", data)
        try:
            return cls(**section)
        except ValidationError as exc:
            raise ConfigurationError(f"Invalid HAR field map in {path}: {exc}") from exc


def _dig(record: Mapping[str, Any], path: str) -> Any:
    node: Any = record
    for key in path.split("."):
        if not isinstance(node, Mapping) or key not in node:
            return None
        node = node[key]
    return node


class RunConfig(BaseModel):  # pylint: disable=too-many-instance-attributes
    """
    Configuration of one `analyze` run.

    A duration model is rejected for NetLog inputs, whose lifetimes are measured.
    """

    model_config = ConfigDict(frozen=True)

    inputs: Tuple[Path, ...] = ()
    kind: InputKind = "har"
    model: Optional[DurationModel] = None
    fetch_mode: FetchMode = FetchMode.FOLLOW
    ip2asn: Optional[Path] = None
    output_dir: Path = OUTPUT_DIR
    top_n: int = Field(default=DEFAULT_TOP_N, ge=1)
    workers: int = Field(default=DEFAULT_WORKERS, ge=1)
    corpus: str = DEFAULT_CORPUS_NAME
    output_format: OutputFormat = "csv"
    har_fields: Optional[Path] = None
    pool_partitioning: bool = True

    @field_validator("corpus")
    @classmethod
    def _plain_corpus_name(cls, value: str) -> str:
        if not value or "/" in value or "\\" in value:
            raise ValueError(f"corpus name {value!r} must be non-empty and contain no path separator")
        return value

    @model_validator(mode="after")
    def _model_matches_kind(self) -> "RunConfig":
        if self.kind == "netlog" and self.model is not None:
            raise ValueError("--model applies to HAR inputs only; NetLog lifetimes are measured")
        return self

    @property
    def effective_model(self) -> Optional[DurationModel]:
        """The duration model to ingest with; ENDLESS by default for HAR, None for NetLog."""
        if self.kind == "netlog":
            return None
        return self.model or DurationModel.ENDLESS

    @classmethod
    def create(cls, **kwargs: Any) -> "RunConfig":
        """
        Build a configuration, reporting validation problems as `ConfigurationError`.

        Raises
        ------
        ConfigurationError
            If any option is invalid or options contradict each other.
        """
        return _create(cls, kwargs)


class ReportConfig(BaseModel):
    """Configuration of one `report` run."""

    model_config = ConfigDict(frozen=True)

    inputs: Tuple[Path, ...]
    intersect: Tuple[Path, ...] = ()
    ip2asn: Optional[Path] = None
    asn: bool = False
    output_dir: Path = OUTPUT_DIR
    top_n: int = Field(default=DEFAULT_TOP_N, ge=1)
    output_format: OutputFormat = "csv"

    @model_validator(mode="after")
    def _asn_needs_mapping(self) -> "ReportConfig":
        if self.asn and self.ip2asn is None:
            raise ValueError("--asn requires --ip2asn PATH")
        return self

    @classmethod
    def create(cls, **kwargs: Any) -> "ReportConfig":
        """Build a configuration, reporting validation problems as `ConfigurationError`."""
        return _create(cls, kwargs)


class ProbeConfig(BaseModel):  # pylint: disable=too-many-instance-attributes
    """Configuration of one `dnsprobe` run."""

    model_config = ConfigDict(frozen=True)

    resolvers: Path
    domains: Path
    interval_s: float = Field(default=DNS_INTERVAL_S, ge=0)
    duration_s: float = Field(default=0, ge=0)
    timeout_s: float = Field(default=DNS_TIMEOUT_S, gt=0)
    scripted: Optional[Path] = None
    check_ecs: bool = False
    pairs: Tuple[Tuple[str, str], ...] = ()
    output_dir: Path = OUTPUT_DIR
    name: str = "dnsprobe"

    @property
    def rounds(self) -> int:
        """Number of rounds the schedule runs; at least one."""
        if self.interval_s <= 0:
            return 1
        return max(1, int(self.duration_s // self.interval_s) + 1)

    @classmethod
    def create(cls, **kwargs: Any) -> "ProbeConfig":
        """Build a configuration, reporting validation problems as `ConfigurationError`."""
        return _create(cls, kwargs)


def _create(model: Any, kwargs: Mapping[str, Any]) -> Any:
    try:
        return model(**kwargs)
    except ValidationError as exc:
        messages = "; ".join(error["msg"] for error in exc.errors())
        raise ConfigurationError(messages) from exc
