"""Software directory records: ingestion, URL validation and anchor selection.

Records arrive as JSON Lines, one object per line::

    {"id": "sw1", "name": "Singular", "urls": ["http://www.singular.uni-kl.de"],
     "publications": [{"year": 2007, "citations": 42}]}

Unknown fields are ignored. URLs are stored in normalized form (see
:func:`validate_url`), so serializing and re-parsing a record list is lossless.
"""
from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from typing import IO, Iterable
from urllib.parse import urlsplit, urlunsplit

MIN_YEAR = 1900
DEFAULT_PORTS = {"http": 80, "https": 443}


class InvalidURLError(ValueError):
    """A string that cannot be used as an absolute http(s) URL.

    ``reason`` is one of ``"unparsable"``, ``"relative"`` or ``"scheme"``.
    """

    def __init__(self, raw: str, reason: str, detail: str = ""):
        self.raw = raw
        self.reason = reason
        msg = f"invalid URL {raw!r}: {reason}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class RecordError(ValueError):
    """A malformed input line."""

    def __init__(self, line: int, message: str):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}")


class DuplicateIdError(ValueError):
    def __init__(self, record_id: str, first_line: int, line: int):
        self.record_id = record_id
        self.first_line = first_line
        self.line = line
        super().__init__(
            f"duplicate record id {record_id!r} (lines {first_line} and {line})"
        )


def max_publication_year() -> int:
    return dt.datetime.now(dt.timezone.utc).year + 1


@dataclass(frozen=True)
class PublicationRef:
    year: int
    citations: int

    def __post_init__(self) -> None:
        for name in ("year", "citations"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValueError(f"{name} must be an integer, got {value!r}")
        if not MIN_YEAR <= self.year <= max_publication_year():
            raise ValueError(f"publication year out of range: {self.year}")
        if self.citations < 0:
            raise ValueError(f"citations must be non-negative: {self.citations}")


@dataclass(frozen=True)
class SoftwareRecord:
    id: str
    name: str
    urls: tuple[str, ...] = ()
    publications: tuple[PublicationRef, ...] = field(default=())

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise ValueError("record id must be a non-empty string")
        if not isinstance(self.name, str):
            raise ValueError("record name must be a string")
        object.__setattr__(self, "urls", tuple(validate_url(u) for u in self.urls))
        object.__setattr__(self, "publications", tuple(self.publications))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "urls": list(self.urls),
            "publications": [
                {"year": p.year, "citations": p.citations} for p in self.publications
            ],
        }


def validate_url(raw: str) -> str:
    """Return the normalized form of an absolute http(s) URL.

    Scheme and host are lowercased, default ports dropped, an empty path becomes
    ``/`` and the fragment is removed. Raises :class:`InvalidURLError`.
    """
    if not isinstance(raw, str):
        raise InvalidURLError(repr(raw), "unparsable", "not a string")
    text = raw.strip()
    if not text or any(c.isspace() or ord(c) < 0x20 or c == "\x7f" for c in text):
        raise InvalidURLError(raw, "unparsable", "empty or contains whitespace")
    try:
        parts = urlsplit(text)
        port = parts.port
    except ValueError as exc:
        raise InvalidURLError(raw, "unparsable", str(exc)) from None
    scheme = parts.scheme.lower()
    if not scheme or not parts.netloc:
        raise InvalidURLError(raw, "relative")
    if scheme not in DEFAULT_PORTS:
        raise InvalidURLError(raw, "scheme", scheme)
    host = parts.hostname
    if not host:
        raise InvalidURLError(raw, "unparsable", "missing host")
    if ":" in host:
        host = f"[{host}]"
    netloc = host
    if parts.username is not None:
        userinfo = parts.netloc.rpartition("@")[0]
        netloc = f"{userinfo}@{host}"
    if port is not None and port != DEFAULT_PORTS[scheme]:
        netloc += f":{port}"
    path = parts.path or "/"
    return urlunsplit((scheme, netloc, path, parts.query, ""))


def _record_from_obj(obj: object, line: int) -> SoftwareRecord:
    if not isinstance(obj, dict):
        raise RecordError(line, "expected a JSON object")
    try:
        rid, name = obj["id"], obj["name"]
        urls, pubs = obj.get("urls", []), obj.get("publications", [])
    except KeyError as exc:
        raise RecordError(line, f"missing field {exc.args[0]!r}") from None
    if not isinstance(rid, str) or not rid:
        raise RecordError(line, "id must be a non-empty string")
    if not isinstance(urls, list) or not isinstance(pubs, list):
        raise RecordError(line, "urls and publications must be arrays")
    try:
        publications = []
        for p in pubs:
            if not isinstance(p, dict):
                raise ValueError("publication entries must be objects")
            publications.append(PublicationRef(year=p.get("year"), citations=p.get("citations")))
        return SoftwareRecord(id=rid, name=name, urls=tuple(urls), publications=tuple(publications))
    except ValueError as exc:
        raise RecordError(line, str(exc)) from None


def parse_records(
    stream: IO[bytes] | Iterable[bytes],
    *,
    skipped: list[RecordError] | None = None,
) -> list[SoftwareRecord]:
    """Parse a JSON Lines byte stream into records, preserving input order.

    With ``skipped=None`` the first malformed line raises :class:`RecordError`.
    Passing a list switches to lenient mode: bad lines are appended to it and
    skipped. Duplicate ids always raise :class:`DuplicateIdError`. Blank lines
    are ignored.
    """
    records: list[SoftwareRecord] = []
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(stream, start=1):
        if not raw.strip():
            continue
        try:
            try:
                obj = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise RecordError(lineno, f"not valid JSON: {exc}") from None
            record = _record_from_obj(obj, lineno)
        except RecordError as err:
            if skipped is None:
                raise
            skipped.append(err)
            continue
        if record.id in seen:
            raise DuplicateIdError(record.id, seen[record.id], lineno)
        seen[record.id] = lineno
        records.append(record)
    return records


def serialize_records(records: Iterable[SoftwareRecord]) -> bytes:
    lines = [
        json.dumps(r.to_dict(), ensure_ascii=False, separators=(",", ":")) + "\n"
        for r in records
    ]
    return "".join(lines).encode("utf-8")


def best_publication(record: SoftwareRecord) -> PublicationRef | None:
    """The most cited publication; ties go to the earliest year, then list order."""
    if not record.publications:
        return None
    _, pub = min(
        enumerate(record.publications),
        key=lambda item: (-item[1].citations, item[1].year, item[0]),
    )
    return pub
