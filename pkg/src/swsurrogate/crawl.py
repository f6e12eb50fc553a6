"""Polite fetching of a fixed URL list into WARC records.

Every request to a host, robots.txt and redirect hops included, passes
through a per-host gate: requests to one host are serialized and each starts
at least ``per_host_delay`` seconds after the previous one finished. A
bounded thread pool performs the fetches; a single writer (the calling
thread) appends records to the sink.
"""
from __future__ import annotations

import datetime as dt
import logging
import ssl
import threading
import time
from collections import OrderedDict, defaultdict
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import BinaryIO, Callable, Iterable, Protocol, TypeVar
from urllib.parse import urljoin, urlsplit

from .records import InvalidURLError, validate_url
from .robots import RobotsPolicy, robots_url
from .warc import WarcRecord, WarcWriter

log = logging.getLogger(__name__)

MAX_REDIRECTS = 5
REDIRECT_STATUSES = {301, 302, 303, 307, 308}
REDIRECT_CHAIN_HEADER = "X-Redirect-Chain"
DEFAULT_USER_AGENT = "swsurrogate/0.1 (+https://pypi.org/project/swsurrogate/)"
# hop-by-hop or encoding headers that no longer describe the stored body
_REWRITTEN_HEADERS = {"content-encoding", "transfer-encoding", "content-length"}

T = TypeVar("T")


@dataclass(frozen=True)
class CrawlConfig:
    max_concurrent_fetches: int = 4
    per_host_delay: float = 1.0
    request_timeout: float = 30.0
    max_body_bytes: int = 10 * 1024 * 1024
    user_agent: str = DEFAULT_USER_AGENT
    respect_robots: bool = True

    def __post_init__(self) -> None:
        if self.max_concurrent_fetches < 1:
            raise ValueError("max_concurrent_fetches must be positive")
        if self.per_host_delay <= 0 or self.request_timeout <= 0:
            raise ValueError("durations must be positive")
        if self.max_body_bytes < 1:
            raise ValueError("max_body_bytes must be positive")


class FetchError(Exception):
    """A request that produced no HTTP response.

    ``reason`` is a short machine-readable label such as ``"connect"``,
    ``"timeout"`` or ``"tls"``.
    """

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


@dataclass
class FetchResponse:
    url: str
    status: int
    reason: str = ""
    http_version: str = "HTTP/1.1"
    headers: list[tuple[str, str]] = field(default_factory=list)
    body: bytes = b""
    truncated: bool = False
    request_headers: list[tuple[str, str]] = field(default_factory=list)

    def header(self, name: str) -> str | None:
        lname = name.lower()
        return next((v for k, v in self.headers if k.lower() == lname), None)


class PageTransport(Protocol):
    """Performs exactly one GET; never follows redirects."""

    def fetch(self, url: str, *, timeout: float, max_bytes: int, user_agent: str) -> FetchResponse: ...


def _is_tls_error(exc: BaseException) -> bool:
    seen = set()
    while exc is not None and id(exc) not in seen:
        seen.add(id(exc))
        if isinstance(exc, ssl.SSLError) or "CERTIFICATE_VERIFY_FAILED" in str(exc):
            return True
        exc = exc.__cause__ or exc.__context__
    return False


class HttpxTransport:
    def __init__(self, *, verify: bool | ssl.SSLContext = True):
        import httpx

        self._httpx = httpx
        self._client = httpx.Client(follow_redirects=False, verify=verify)

    def close(self) -> None:
        self._client.close()

    def fetch(self, url: str, *, timeout: float, max_bytes: int, user_agent: str) -> FetchResponse:
        httpx = self._httpx
        headers = {"User-Agent": user_agent, "Accept": "*/*"}
        try:
            with self._client.stream("GET", url, headers=headers, timeout=timeout) as resp:
                body = bytearray()
                truncated = False
                for chunk in resp.iter_bytes():
                    room = max_bytes - len(body)
                    if len(chunk) > room:
                        body += chunk[:room]
                        truncated = True
                        break
                    body += chunk
                return FetchResponse(
                    url=url,
                    status=resp.status_code,
                    reason=resp.reason_phrase,
                    http_version=resp.http_version,
                    headers=list(resp.headers.multi_items()),
                    body=bytes(body),
                    truncated=truncated,
                    request_headers=list(resp.request.headers.multi_items()),
                )
        except httpx.TimeoutException as exc:
            raise FetchError("timeout", str(exc)) from exc
        except httpx.HTTPError as exc:
            if _is_tls_error(exc):
                raise FetchError("tls", str(exc)) from exc
            if isinstance(exc, httpx.ConnectError):
                raise FetchError("connect", str(exc)) from exc
            raise FetchError("network", str(exc)) from exc


class HostGate:
    """Serializes requests per host and spaces them by ``delay`` seconds."""

    def __init__(
        self,
        delay: float,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.delay = delay
        self._clock = clock
        self._sleep = sleep
        self._guard = threading.Lock()
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._ready: dict[str, float] = {}

    def run(self, host: str, fn: Callable[[], T]) -> T:
        with self._guard:
            lock = self._locks[host]
        with lock:
            ready = self._ready.get(host, float("-inf"))
            # re-check after sleeping: sleep may wake marginally early
            while (pause := ready - self._clock()) > 0:
                self._sleep(pause)
            try:
                return fn()
            finally:
                self._ready[host] = self._clock() + self.delay


@dataclass
class CrawlSummary:
    fetched: int = 0
    failed: int = 0
    skipped_robots: int = 0
    failures: dict[str, str] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)
    offsets: dict[str, tuple[int, int]] = field(default_factory=dict)

    def as_tuple(self) -> tuple[int, int, int]:
        return self.fetched, self.failed, self.skipped_robots

    def to_dict(self) -> dict:
        return {
            "fetched": self.fetched,
            "failed": self.failed,
            "skipped_robots": self.skipped_robots,
            "failures": dict(self.failures),
            "skipped_robots_urls": list(self.skipped),
        }


@dataclass
class _Outcome:
    url: str
    kind: str  # "fetched" | "failed" | "robots"
    reason: str = ""
    response: FetchResponse | None = None
    chain: list[str] = field(default_factory=list)
    fetched_at: dt.datetime | None = None


def _host(url: str) -> str:
    return (urlsplit(url).hostname or "").lower()


def _origin(url: str) -> str:
    parts = urlsplit(url)
    return f"{parts.scheme}://{parts.netloc}"


class _Crawler:
    def __init__(self, config: CrawlConfig, transport: PageTransport, gate: HostGate):
        self.config = config
        self.transport = transport
        self.gate = gate
        self._robots: dict[str, RobotsPolicy | FetchError] = {}
        self._robots_locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._guard = threading.Lock()

    def _request(self, url: str) -> FetchResponse:
        cfg = self.config
        return self.gate.run(
            _host(url),
            lambda: self.transport.fetch(
                url,
                timeout=cfg.request_timeout,
                max_bytes=cfg.max_body_bytes,
                user_agent=cfg.user_agent,
            ),
        )

    def _robots_for(self, url: str) -> RobotsPolicy:
        origin = _origin(url)
        with self._guard:
            lock = self._robots_locks[origin]
        with lock:
            if origin not in self._robots:
                self._robots[origin] = self._load_robots(robots_url(url))
        policy = self._robots[origin]
        if isinstance(policy, FetchError):
            raise policy
        return policy

    def _load_robots(self, url: str) -> RobotsPolicy | FetchError:
        try:
            for _ in range(MAX_REDIRECTS + 1):
                resp = self._request(url)
                location = resp.header("location")
                if resp.status in REDIRECT_STATUSES and location:
                    url = urljoin(url, location)
                    continue
                return RobotsPolicy.from_status(resp.status, resp.body)
            return RobotsPolicy.allowing()
        except FetchError as exc:
            return exc

    def process(self, url: str) -> _Outcome:
        chain = [url]
        current = url
        try:
            for hop in range(MAX_REDIRECTS + 1):
                if self.config.respect_robots:
                    if not self._robots_for(current).can_fetch(self.config.user_agent, current):
                        return _Outcome(url, "robots", chain=chain)
                resp = self._request(current)
                location = resp.header("location")
                if resp.status in REDIRECT_STATUSES and location:
                    if hop == MAX_REDIRECTS:
                        return _Outcome(url, "failed", "redirects", chain=chain)
                    try:
                        current = validate_url(urljoin(current, location))
                    except InvalidURLError:
                        return _Outcome(url, "failed", "bad_redirect", chain=chain)
                    chain.append(current)
                    continue
                if resp.status >= 400:
                    return _Outcome(url, "failed", f"http_{resp.status}", chain=chain)
                now = dt.datetime.now(dt.timezone.utc).replace(microsecond=0)
                return _Outcome(url, "fetched", response=resp, chain=chain, fetched_at=now)
        except FetchError as exc:
            return _Outcome(url, "failed", exc.reason, chain=chain)
        except Exception as exc:  # a transport bug must not abort the crawl
            log.exception("unexpected error fetching %s", url)
            return _Outcome(url, "failed", f"error:{type(exc).__name__}", chain=chain)
        raise AssertionError("unreachable")


def _archival_headers(resp: FetchResponse) -> list[tuple[str, str]]:
    headers = []
    for name, value in resp.headers:
        if name.lower() in _REWRITTEN_HEADERS:
            headers.append((f"X-Archive-Orig-{name}", value))
        else:
            headers.append((name, value))
    headers.append(("Content-Length", str(len(resp.body))))
    return headers


def outcome_records(outcome: _Outcome) -> tuple[WarcRecord, WarcRecord]:
    """The request/response record pair for a fetched URL."""
    resp = outcome.response
    assert resp is not None and outcome.fetched_at is not None
    warc_headers = []
    if len(outcome.chain) > 1:
        warc_headers.append((REDIRECT_CHAIN_HEADER, " ".join(outcome.chain)))
    if resp.truncated:
        warc_headers.append(("WARC-Truncated", "length"))
    response = WarcRecord(
        record_type="response",
        target_uri=outcome.url,
        timestamp=outcome.fetched_at,
        payload=resp.body,
        headers=warc_headers,
        http_status_line=f"{resp.http_version} {resp.status} {resp.reason}".rstrip(),
        http_headers=_archival_headers(resp),
    )
    parts = urlsplit(resp.url)
    target = (parts.path or "/") + (f"?{parts.query}" if parts.query else "")
    request = WarcRecord(
        record_type="request",
        target_uri=outcome.url,
        timestamp=outcome.fetched_at,
        headers=[("WARC-Concurrent-To", response.record_id)],
        http_status_line=f"GET {target} HTTP/1.1",
        http_headers=list(resp.request_headers),
    )
    return request, response


def _interleave_by_host(urls: Iterable[str]) -> list[str]:
    queues: OrderedDict[str, list[str]] = OrderedDict()
    for url in urls:
        queues.setdefault(_host(url), []).append(url)
    ordered = []
    while queues:
        for host in list(queues):
            ordered.append(queues[host].pop(0))
            if not queues[host]:
                del queues[host]
    return ordered


def crawl(
    urls: Iterable[str],
    config: CrawlConfig,
    sink: BinaryIO | WarcWriter,
    *,
    transport: PageTransport | None = None,
    gate: HostGate | None = None,
) -> CrawlSummary:
    """Fetch each distinct URL once and write request/response records.

    Individual fetch failures are counted in the summary; an exception from
    the sink aborts the crawl.
    """
    writer = sink if isinstance(sink, WarcWriter) else WarcWriter(sink)
    distinct = list(dict.fromkeys(urls))
    own_transport = transport is None
    if transport is None:
        transport = HttpxTransport()
    crawler = _Crawler(config, transport, gate or HostGate(config.per_host_delay))
    summary = CrawlSummary()
    pool = ThreadPoolExecutor(max_workers=config.max_concurrent_fetches)
    try:
        pending = {pool.submit(crawler.process, u) for u in _interleave_by_host(distinct)}
        while pending:
            done, pending = wait(pending, return_when=FIRST_COMPLETED)
            for future in done:
                outcome = future.result()
                if outcome.kind == "fetched":
                    request, response = outcome_records(outcome)
                    writer.write(request)
                    summary.offsets[outcome.url] = writer.write(response)
                    summary.fetched += 1
                elif outcome.kind == "robots":
                    summary.skipped_robots += 1
                    summary.skipped.append(outcome.url)
                else:
                    summary.failed += 1
                    summary.failures[outcome.url] = outcome.reason
                    log.info("fetch failed for %s: %s", outcome.url, outcome.reason)
    finally:
        pool.shutdown(wait=True, cancel_futures=True)
        if own_transport:
            transport.close()
    return summary
