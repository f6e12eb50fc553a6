import socket
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import urlsplit

import pytest

from swsurrogate.crawl import FetchError, FetchResponse


@dataclass
class Call:
    url: str
    host: str
    start: float
    end: float


@dataclass
class SimulatedTransport:
    """In-memory page transport that records a timing trace of every request.

    ``pages`` maps URL -> (status, headers, body) or a FetchError reason string.
    Missing robots.txt URLs answer 404; other missing URLs answer 404 too.
    """

    pages: dict = field(default_factory=dict)
    latency: float = 0.0
    calls: list = field(default_factory=list)
    max_in_flight: int = 0
    _in_flight: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def fetch(self, url, *, timeout, max_bytes, user_agent):
        with self._lock:
            self._in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self._in_flight)
        start = time.monotonic()
        try:
            if self.latency:
                time.sleep(self.latency)
            spec = self.pages.get(url, (404, [], b""))
            if isinstance(spec, str):
                raise FetchError(spec, url)
            status, headers, body = spec
            return FetchResponse(
                url=url,
                status=status,
                reason="OK" if status == 200 else "",
                headers=list(headers),
                body=body[:max_bytes],
                truncated=len(body) > max_bytes,
                request_headers=[("Host", urlsplit(url).netloc), ("User-Agent", user_agent)],
            )
        finally:
            end = time.monotonic()
            with self._lock:
                self._in_flight -= 1
                self.calls.append(Call(url, urlsplit(url).hostname, start, end))


class _Handler(BaseHTTPRequestHandler):
    routes: dict = {}

    def do_GET(self):
        spec = self.routes.get(self.path)
        if spec is None:
            self.send_error(404)
            return
        status, headers, body = spec
        self.send_response(status)
        for k, v in headers:
            self.send_header(k, v)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server():
    """A local server; tests fill ``server.routes`` with path -> (status, headers, body)."""
    routes = {}
    handler = type("Handler", (_Handler,), {"routes": routes})
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    server.routes = routes
    server.base = f"http://127.0.0.1:{server.server_address[1]}"
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    server.server_close()


@pytest.fixture
def closed_port():
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    return port


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdict lines at the end of the run."""
    import sys

    lines = getattr(sys.modules.get("test_acceptance"), "_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
