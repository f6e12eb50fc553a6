"""Wayback CDX capture-index client and capture selection.

Only capture metadata is handled here; archived page bodies are never
fetched. Transports return ``(status, body)`` for a URL query so the same
parser serves live requests and recorded fixtures.
"""
from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

log = logging.getLogger(__name__)

CDX_ENDPOINT = "https://web.archive.org/cdx/search/cdx"
CDX_FIELDS = ("urlkey", "timestamp", "original", "mimetype", "statuscode", "digest", "length")
TIMESTAMP_FORMAT = "%Y%m%d%H%M%S"
# month, day and time default to the start of the period
_TIMESTAMP_PAD = "19700101000000"
_ACCESS_MARKERS = (
    "accesscontrolexception",
    "blocked by robots",
    "blocked site error",
    "robots.txt",
    "excluded from wayback",
)

UTC = dt.timezone.utc


class TransportError(RuntimeError):
    """The index could not be queried; distinct from "never archived"."""


class MissingDigestError(ValueError):
    pass


def parse_timestamp(raw: str) -> dt.datetime:
    """Parse a CDX timestamp, right-padding 4..12 digit prefixes."""
    text = raw.strip()
    if not text.isdigit() or len(text) not in (4, 6, 8, 10, 12, 14):
        raise ValueError(f"bad CDX timestamp {raw!r}")
    padded = text + _TIMESTAMP_PAD[len(text):]
    return dt.datetime.strptime(padded, TIMESTAMP_FORMAT).replace(tzinfo=UTC)


def format_timestamp(ts: dt.datetime) -> str:
    return ts.astimezone(UTC).strftime(TIMESTAMP_FORMAT)


@dataclass(frozen=True)
class Capture:
    original_url: str
    timestamp: dt.datetime
    status: int | None = None
    mime: str = ""
    digest: str = ""
    length: int | None = None

    @property
    def timestamp14(self) -> str:
        return format_timestamp(self.timestamp)

    def to_dict(self) -> dict:
        return {
            "original": self.original_url,
            "timestamp": self.timestamp14,
            "statuscode": self.status,
            "mimetype": self.mime,
            "digest": self.digest,
            "length": self.length,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Capture":
        return cls(
            original_url=data["original"],
            timestamp=parse_timestamp(data["timestamp"]),
            status=data.get("statuscode"),
            mime=data.get("mimetype") or "",
            digest=data.get("digest") or "",
            length=data.get("length"),
        )


@dataclass(frozen=True)
class CaptureQueryResult:
    url: str
    captures: tuple[Capture, ...] = ()
    robots_blocked: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "captures", tuple(sorted(self.captures, key=lambda c: c.timestamp))
        )

    def to_dict(self) -> dict:
        return {
            "url": self.url,
            "robots_blocked": self.robots_blocked,
            "captures": [c.to_dict() for c in self.captures],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CaptureQueryResult":
        return cls(
            url=data["url"],
            captures=tuple(Capture.from_dict(c) for c in data.get("captures", [])),
            robots_blocked=bool(data.get("robots_blocked", False)),
        )


def _optional_int(value: str | int | None) -> int | None:
    if value is None or value in ("", "-"):
        return None
    return int(value)


def _capture_from_fields(row: dict[str, str]) -> Capture:
    return Capture(
        original_url=row["original"],
        timestamp=parse_timestamp(row["timestamp"]),
        status=_optional_int(row.get("statuscode")),
        mime=row.get("mimetype", "") or "",
        digest="" if row.get("digest") in (None, "-") else row["digest"],
        length=_optional_int(row.get("length")),
    )


def parse_cdx_body(body: bytes) -> list[Capture]:
    """Parse a CDX response in JSON mode or the plain space-delimited format.

    JSON mode starts with a header row naming the fields. The plain format
    assumes the default field order ``urlkey timestamp original mimetype
    statuscode digest length``.
    """
    text = body.decode("utf-8", errors="replace").strip()
    if not text:
        return []
    try:
        if text.startswith("["):
            rows = json.loads(text)
            if not rows:
                return []
            header = rows[0]
            return [_capture_from_fields(dict(zip(header, r))) for r in rows[1:]]
        captures = []
        for line in text.splitlines():
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) < len(CDX_FIELDS):
                raise ValueError(f"expected {len(CDX_FIELDS)} fields: {line!r}")
            captures.append(_capture_from_fields(dict(zip(CDX_FIELDS, parts))))
        return captures
    except (ValueError, KeyError, TypeError) as exc:
        raise TransportError(f"unparsable CDX response: {exc}") from None


def is_access_blocked(status: int, body: bytes) -> bool:
    """Whether the index refused the query for access-control reasons."""
    if status == 403:
        return True
    head = body[:4096].decode("utf-8", errors="replace").lower()
    if head.lstrip().startswith("[") or not head.strip():
        return False
    return any(marker in head for marker in _ACCESS_MARKERS)


class CdxTransport(Protocol):
    def query(self, url: str) -> tuple[int, bytes]: ...


def fixture_key(url: str) -> str:
    return hashlib.sha256(url.encode("utf-8")).hexdigest()


class FixtureTransport:
    """Reads recorded response bodies from ``<directory>/<sha256(url)>.json``."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def path_for(self, url: str) -> Path:
        return self.directory / f"{fixture_key(url)}.json"

    def query(self, url: str) -> tuple[int, bytes]:
        path = self.path_for(url)
        try:
            return 200, path.read_bytes()
        except FileNotFoundError:
            raise TransportError(f"no recorded CDX fixture for {url} ({path.name})") from None


class RateLimiter:
    """Allows one call per ``interval`` seconds across threads."""

    def __init__(
        self,
        interval: float,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.interval = interval
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next = float("-inf")

    def wait(self) -> None:
        with self._lock:
            now = self._clock()
            if now < self._next:
                self._sleep(self._next - now)
                now = self._clock()
            self._next = max(now, self._next) + self.interval


@dataclass
class HttpTransport:
    endpoint: str = CDX_ENDPOINT
    interval: float = 1.0
    timeout: float = 30.0
    max_retries: int = 4
    backoff: float = 2.0
    user_agent: str = "swsurrogate-cdx/0.1"
    sleep: Callable[[float], None] = time.sleep
    client: object = None
    _limiter: RateLimiter = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._limiter = RateLimiter(self.interval, sleep=self.sleep)

    def _client(self):
        if self.client is None:
            import httpx

            self.client = httpx.Client(
                timeout=self.timeout, headers={"User-Agent": self.user_agent}
            )
        return self.client

    def query(self, url: str) -> tuple[int, bytes]:
        import httpx

        params = {"url": url, "output": "json", "fl": ",".join(CDX_FIELDS)}
        delay = self.interval or 1.0
        for attempt in range(self.max_retries + 1):
            self._limiter.wait()
            try:
                resp = self._client().get(self.endpoint, params=params)
            except httpx.HTTPError as exc:
                raise TransportError(f"CDX request for {url} failed: {exc}") from exc
            if resp.status_code != 429 and resp.status_code < 500:
                return resp.status_code, resp.content
            if attempt < self.max_retries:
                log.info("CDX %s for %s, retrying in %.1fs", resp.status_code, url, delay)
                self.sleep(delay)
                delay *= self.backoff
        return resp.status_code, resp.content


def query_captures(url: str, transport: CdxTransport) -> CaptureQueryResult:
    status, body = transport.query(url)
    if is_access_blocked(status, body):
        return CaptureQueryResult(url=url, robots_blocked=True)
    if status != 200:
        raise TransportError(f"CDX query for {url} returned HTTP {status}")
    return CaptureQueryResult(url=url, captures=tuple(parse_cdx_body(body)))


def latest_capture(result: CaptureQueryResult) -> Capture | None:
    return result.captures[-1] if result.captures else None


def closest_capture(result: CaptureQueryResult, target: dt.datetime) -> Capture | None:
    """Capture nearest to ``target``; equidistant captures resolve to the earlier."""
    if not result.captures:
        return None
    return min(result.captures, key=lambda c: (abs(c.timestamp - target), c.timestamp))


def changed_between(past: Capture, latest: Capture) -> bool:
    if not past.digest or not latest.digest:
        raise MissingDigestError("change detection needs a digest on both captures")
    return past.digest != latest.digest


def mid_year(year: int) -> dt.datetime:
    return dt.datetime(year, 7, 2, tzinfo=UTC)


def year_window(year: int) -> tuple[dt.datetime, dt.datetime]:
    return dt.datetime(year, 1, 1, tzinfo=UTC), dt.datetime(year, 12, 31, 23, 59, 59, tzinfo=UTC)


def capture_in_year(result: CaptureQueryResult, year: int) -> Capture | None:
    start, end = year_window(year)
    inside = CaptureQueryResult(
        result.url, tuple(c for c in result.captures if start <= c.timestamp <= end)
    )
    return closest_capture(inside, mid_year(year))


def nearest_by_year(captures: Sequence[Capture], year: int) -> Capture | None:
    """Capture whose calendar year is nearest ``year``.

    Within the winning year(s) the capture nearest mid-year wins, earlier on
    ties. A capture in ``year`` itself is therefore always preferred, which
    keeps the gap at zero whenever the year window is non-empty.
    """
    if not captures:
        return None
    anchor = mid_year(year)
    return min(
        captures,
        key=lambda c: (abs(c.timestamp.year - year), abs(c.timestamp - anchor), c.timestamp),
    )
