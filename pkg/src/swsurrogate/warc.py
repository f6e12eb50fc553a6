"""WARC/1.0 record writing and reading.

Each record is optionally written as its own gzip member, so byte offsets
returned by the writer can be used for random access. The reader accepts
plain or member-per-record gzip files (and single-member whole-file gzip).
"""
from __future__ import annotations

import base64
import datetime as dt
import gzip
import hashlib
import io
import logging
import re
import uuid
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterator

log = logging.getLogger(__name__)

RECORD_TYPES = ("response", "request", "warcinfo")
WARC_DATE_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
CRLF = b"\r\n"
_GZIP_MAGIC = b"\x1f\x8b"
_CHUNK = 1 << 16
_TOKEN = re.compile(r"^[!#$%&'*+\-.^_`|~0-9A-Za-z]+$")

# fields derived from the record itself rather than kept in ``headers``
_MANAGED = {
    "warc-type",
    "warc-record-id",
    "warc-date",
    "warc-target-uri",
    "content-type",
    "content-length",
    "warc-block-digest",
    "warc-payload-digest",
}

_HTTP_CONTENT_TYPES = {
    "response": "application/http; msgtype=response",
    "request": "application/http; msgtype=request",
}


class WarcFormatError(ValueError):
    """Malformed or truncated record starting at ``offset`` in the file."""

    def __init__(self, offset: int, message: str):
        self.offset = offset
        super().__init__(f"at byte {offset}: {message}")


def new_record_id() -> str:
    return f"<urn:uuid:{uuid.uuid4()}>"


def _sha1_label(data: bytes) -> str:
    return "sha1:" + base64.b32encode(hashlib.sha1(data).digest()).decode("ascii")


@dataclass
class WarcRecord:
    """One WARC record.

    For ``request``/``response`` records carrying an HTTP message,
    ``http_status_line`` and ``http_headers`` hold the message head and
    ``payload`` the entity body. Otherwise the whole block is ``payload``.
    ``headers`` lists extra WARC named fields in order.
    """

    record_type: str
    target_uri: str | None
    timestamp: dt.datetime
    payload: bytes = b""
    headers: list[tuple[str, str]] = field(default_factory=list)
    http_status_line: str | None = None
    http_headers: list[tuple[str, str]] = field(default_factory=list)
    content_type: str | None = None
    record_id: str = field(default_factory=new_record_id)

    def __post_init__(self) -> None:
        if self.record_type not in RECORD_TYPES:
            raise ValueError(f"unsupported WARC record type {self.record_type!r}")
        if self.timestamp.tzinfo is None:
            raise ValueError("WARC record timestamp must be timezone-aware")
        self.timestamp = self.timestamp.astimezone(dt.timezone.utc).replace(microsecond=0)

    def header(self, name: str) -> str | None:
        lname = name.lower()
        return next((v for k, v in self.headers if k.lower() == lname), None)

    def http_header(self, name: str) -> str | None:
        lname = name.lower()
        return next((v for k, v in self.http_headers if k.lower() == lname), None)

    @property
    def http_status(self) -> int | None:
        if self.record_type != "response" or not self.http_status_line:
            return None
        parts = self.http_status_line.split()
        return int(parts[1]) if len(parts) > 1 and parts[1].isdigit() else None

    def block(self) -> bytes:
        if self.http_status_line is None:
            return self.payload
        head = [self.http_status_line.encode("latin-1")]
        head += [f"{k}: {v}".encode("latin-1") for k, v in self.http_headers]
        return CRLF.join(head) + CRLF + CRLF + self.payload


def _check_field(name: str, value: str) -> None:
    if not _TOKEN.match(name):
        raise ValueError(f"invalid header name {name!r}")
    if "\r" in value or "\n" in value:
        raise ValueError(f"header {name!r} value contains a line break")


def serialize_record(record: WarcRecord, *, now: dt.datetime | None = None) -> bytes:
    """Uncompressed WARC/1.0 bytes for ``record``."""
    now = now or dt.datetime.now(dt.timezone.utc)
    if record.timestamp > now:
        raise ValueError(f"record timestamp {record.timestamp.isoformat()} is in the future")
    for name, value in [*record.headers, *record.http_headers]:
        _check_field(name, value)
    for name, _ in record.headers:
        if name.lower() in _MANAGED:
            raise ValueError(f"{name} is derived from the record and cannot be set as a header")
    if record.http_status_line is not None and ("\r" in record.http_status_line or "\n" in record.http_status_line):
        raise ValueError("HTTP status line contains a line break")

    block = record.block()
    content_type = record.content_type
    if content_type is None:
        if record.http_status_line is not None:
            content_type = _HTTP_CONTENT_TYPES[record.record_type]
        elif record.record_type == "warcinfo":
            content_type = "application/warc-fields"
    fields = [
        ("WARC-Type", record.record_type),
        ("WARC-Record-ID", record.record_id),
        ("WARC-Date", record.timestamp.strftime(WARC_DATE_FORMAT)),
    ]
    if record.target_uri is not None:
        fields.append(("WARC-Target-URI", record.target_uri))
    if content_type:
        fields.append(("Content-Type", content_type))
    fields.append(("WARC-Block-Digest", _sha1_label(block)))
    if record.http_status_line is not None:
        fields.append(("WARC-Payload-Digest", _sha1_label(record.payload)))
    fields.extend(record.headers)
    fields.append(("Content-Length", str(len(block))))

    lines = [b"WARC/1.0"] + [f"{k}: {v}".encode("utf-8") for k, v in fields]
    return CRLF.join(lines) + CRLF + CRLF + block + CRLF + CRLF


class WarcWriter:
    """Appends records to a binary sink; one writer per sink."""

    def __init__(self, sink: BinaryIO, *, compress: bool = True):
        self.sink = sink
        self.compress = compress

    def write(self, record: WarcRecord) -> tuple[int, int]:
        data = serialize_record(record)
        if self.compress:
            data = gzip.compress(data, mtime=0)
        offset = self.sink.tell()
        self.sink.write(data)
        return offset, len(data)


def write_record(record: WarcRecord, sink: BinaryIO, *, compress: bool = True) -> tuple[int, int]:
    """Write one record and return its ``(offset, length)`` in the sink."""
    return WarcWriter(sink, compress=compress).write(record)


def _parse_http_block(block: bytes) -> tuple[str, list[tuple[str, str]], bytes] | None:
    head, sep, body = block.partition(CRLF + CRLF)
    if not sep:
        return None
    lines = head.decode("latin-1").split("\r\n")
    headers = []
    for line in lines[1:]:
        name, colon, value = line.partition(":")
        if not colon:
            return None
        headers.append((name, value.strip(" \t")))
    return lines[0], headers, body


def _record_from_parts(fields: list[tuple[str, str]], block: bytes, offset: int) -> WarcRecord:
    lookup = {k.lower(): v for k, v in fields}
    try:
        record_type = lookup["warc-type"]
        timestamp = dt.datetime.strptime(lookup["warc-date"], WARC_DATE_FORMAT).replace(
            tzinfo=dt.timezone.utc
        )
    except KeyError as exc:
        raise WarcFormatError(offset, f"missing {exc.args[0]} field") from None
    except ValueError:
        raise WarcFormatError(offset, f"bad WARC-Date {lookup['warc-date']!r}") from None
    if record_type not in RECORD_TYPES:
        raise WarcFormatError(offset, f"unsupported record type {record_type!r}")

    content_type = lookup.get("content-type")
    status_line, http_headers, payload = None, [], block
    if content_type and content_type.lower().startswith("application/http"):
        parsed = _parse_http_block(block)
        if parsed is None:
            raise WarcFormatError(offset, "malformed HTTP message in block")
        status_line, http_headers, payload = parsed
    if content_type in (_HTTP_CONTENT_TYPES.get(record_type), "application/warc-fields"):
        content_type = None
    return WarcRecord(
        record_type=record_type,
        target_uri=lookup.get("warc-target-uri"),
        timestamp=timestamp,
        payload=payload,
        headers=[(k, v) for k, v in fields if k.lower() not in _MANAGED],
        http_status_line=status_line,
        http_headers=http_headers,
        content_type=content_type,
        record_id=lookup.get("warc-record-id", ""),
    )


class _Garbage(Exception):
    pass


def _read_one(stream: BinaryIO, offset: int) -> tuple[WarcRecord, int] | None:
    """Parse one record; returns ``None`` at clean EOF.

    ``offset`` is the position used in error reports. Raises :class:`_Garbage`
    when the next non-blank bytes do not start a WARC record.
    """
    consumed = 0
    while True:
        line = stream.readline()
        if not line:
            return None
        consumed += len(line)
        if line.strip():
            break
    if not line.startswith(b"WARC/"):
        raise _Garbage()
    if line.rstrip(b"\r\n") not in (b"WARC/1.0", b"WARC/1.1"):
        raise WarcFormatError(offset, f"unsupported version line {line[:20]!r}")

    fields: list[tuple[str, str]] = []
    while True:
        line = stream.readline()
        consumed += len(line)
        if not line:
            raise WarcFormatError(offset, "truncated record header")
        if line in (CRLF, b"\n"):
            break
        text = line.decode("utf-8", errors="replace").rstrip("\r\n")
        if text[:1] in (" ", "\t") and fields:
            name, value = fields[-1]
            fields[-1] = (name, value + " " + text.strip())
            continue
        name, colon, value = text.partition(":")
        if not colon or not name.strip():
            raise WarcFormatError(offset, f"malformed header line {text[:60]!r}")
        fields.append((name.strip(), value.strip()))

    length_value = next((v for k, v in fields if k.lower() == "content-length"), None)
    if length_value is None or not length_value.isdigit():
        raise WarcFormatError(offset, "missing or invalid Content-Length")
    length = int(length_value)
    block = stream.read(length)
    consumed += len(block)
    if len(block) < length:
        raise WarcFormatError(offset, f"truncated block: {len(block)} of {length} bytes")
    trailer = stream.read(4)
    consumed += len(trailer)
    if trailer != CRLF + CRLF:
        raise WarcFormatError(offset, "record not terminated by CRLF CRLF")
    return _record_from_parts(fields, block, offset), consumed


def _gzip_members(fh: BinaryIO) -> Iterator[tuple[int, bytes]]:
    """Yield ``(file offset, decompressed bytes)`` per gzip member."""
    buf = b""
    pos = 0
    while True:
        if len(buf) < 2:
            buf += fh.read(_CHUNK)
        if not buf:
            return
        if not buf.startswith(_GZIP_MAGIC):
            raise _Garbage(pos)
        start = pos
        decomp = zlib.decompressobj(wbits=31)
        out = []
        chunk, fed = buf, 0
        try:
            while True:
                out.append(decomp.decompress(chunk))
                fed += len(chunk)
                if decomp.eof:
                    break
                chunk = fh.read(_CHUNK)
                if not chunk:
                    raise WarcFormatError(start, "truncated gzip member")
        except zlib.error as exc:
            raise WarcFormatError(start, f"corrupt gzip member: {exc}") from None
        buf = decomp.unused_data
        pos = start + fed - len(buf)
        yield start, b"".join(out)


def _iter_plain(fh: BinaryIO) -> Iterator[WarcRecord]:
    offset = 0
    while True:
        try:
            parsed = _read_one(fh, offset)
        except _Garbage:
            if offset == 0:
                raise WarcFormatError(offset, "not a WARC record") from None
            log.warning("ignoring trailing data at byte %d", offset)
            return
        if parsed is None:
            return
        record, consumed = parsed
        offset += consumed
        yield record


def read_records(source: BinaryIO | str | Path) -> Iterator[WarcRecord]:
    """Iterate records in file order.

    Bytes after the last complete record that do not begin another record
    are ignored with a warning. A record that starts but is cut short raises
    :class:`WarcFormatError` carrying the record's offset (for gzip files,
    the offset of its member).
    """
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            yield from read_records(fh)
        return

    stream = source if hasattr(source, "peek") else io.BufferedReader(source)
    head = stream.peek(2)[:2]
    if not head.startswith(_GZIP_MAGIC):
        yield from _iter_plain(stream)
        return

    members = _gzip_members(stream)
    while True:
        try:
            start, data = next(members)
        except StopIteration:
            return
        except _Garbage as exc:
            log.warning("ignoring trailing data at byte %d", exc.args[0])
            return
        inner = io.BytesIO(data)
        while True:
            try:
                parsed = _read_one(inner, start)
            except _Garbage:
                raise WarcFormatError(start, "gzip member does not contain a WARC record") from None
            if parsed is None:
                break
            yield parsed[0]
