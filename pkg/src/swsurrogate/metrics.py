"""Archive coverage, temporal gaps and citable surrogate references.

Row-level facts are kept per (software, URL). Aggregates are per software: a
software counts as archived when any of its URLs is, and its gap comes from the
URL with the smallest absolute gap.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence
from urllib.parse import urlsplit

from . import cdx
from .cdx import CaptureQueryResult, changed_between, capture_in_year, latest_capture
from .records import SoftwareRecord, best_publication

DEFAULT_REPLAY_BASE = "https://web.archive.org/web"
DEFAULT_WINDOW_YEARS = 2

ROW_HEADER = [
    "software_id",
    "url",
    "archived_now",
    "robots_blocked",
    "archived_in_pub_year",
    "gap_years",
    "changed",
]

# numerator/denominator definitions, all counted per software
AGGREGATE_DEFINITIONS = {
    "archived_now": (
        "software with at least one URL that has a capture",
        "software with at least one URL",
    ),
    "robots_blocked": (
        "software with at least one URL refused by the index for access-control reasons",
        "software with at least one URL",
    ),
    "archived_past": (
        "software with a capture inside its best-publication year",
        "software with at least one URL and at least one publication",
    ),
    "changed_given_past": (
        "software whose best-publication-year capture digest differs from the latest capture",
        "software with both a best-publication-year capture and a latest capture",
    ),
}


class MissingCaptureResult(KeyError):
    def __init__(self, url: str):
        self.url = url
        super().__init__(url)

    def __str__(self) -> str:
        return f"no capture query result for {self.url}"


@dataclass(frozen=True)
class CoverageRow:
    software_id: str
    url: str
    archived_now: bool
    robots_blocked: bool
    archived_in_publication_year: bool
    gap_years: int | None
    changed: bool | None

    def __post_init__(self) -> None:
        if self.archived_in_publication_year and self.gap_years != 0:
            raise ValueError(f"{self.software_id}: archived in publication year but gap {self.gap_years}")


@dataclass(frozen=True)
class Fraction:
    numerator: int
    denominator: int

    @property
    def value(self) -> float | None:
        return self.numerator / self.denominator if self.denominator else None


@dataclass
class CoverageReport:
    rows: list[CoverageRow]
    aggregates: dict[str, Fraction]
    gap_histogram: dict[int, int]
    software_gaps: dict[str, int] = field(default_factory=dict)
    by_year: dict[int, dict[str, Fraction]] = field(default_factory=dict)


@dataclass(frozen=True)
class SurrogateRef:
    software_id: str
    url: str
    capture_timestamp: str
    replay_url: str
    anchor_year: int
    gap_years: int

    def to_dict(self) -> dict:
        return asdict(self)


def coverage_row(record: SoftwareRecord, url: str, result: CaptureQueryResult) -> CoverageRow:
    best = best_publication(record)
    latest = latest_capture(result)
    gap = in_year = changed = None
    if best is not None:
        nearest = cdx.nearest_by_year(result.captures, best.year)
        if nearest is not None:
            gap = nearest.timestamp.year - best.year
        in_year = capture_in_year(result, best.year)
        if in_year is not None and latest is not None:
            changed = changed_between(in_year, latest)
    return CoverageRow(
        software_id=record.id,
        url=url,
        archived_now=latest is not None,
        robots_blocked=result.robots_blocked,
        archived_in_publication_year=in_year is not None,
        gap_years=gap,
        changed=changed,
    )


def gap_histogram(rows: Iterable[CoverageRow]) -> dict[int, int]:
    counts = Counter(r.gap_years for r in rows if r.gap_years is not None)
    return dict(sorted(counts.items()))


def _smallest_gap(rows: Sequence[CoverageRow]) -> int | None:
    gaps = [r.gap_years for r in rows if r.gap_years is not None]
    # ties between -k and +k go to the earlier (negative) gap
    return min(gaps, key=lambda g: (abs(g), g)) if gaps else None


def _aggregate(groups: Mapping[str, tuple[SoftwareRecord, list[CoverageRow]]]) -> dict[str, Fraction]:
    counts = {name: [0, 0] for name in AGGREGATE_DEFINITIONS}
    for record, rows in groups.values():
        if not rows:
            continue
        has_pub = best_publication(record) is not None

        def bump(name: str, eligible: bool, hit: bool) -> None:
            if eligible:
                counts[name][1] += 1
                counts[name][0] += bool(hit)

        bump("archived_now", True, any(r.archived_now for r in rows))
        bump("robots_blocked", True, any(r.robots_blocked for r in rows))
        bump("archived_past", has_pub, any(r.archived_in_publication_year for r in rows))
        defined = [r.changed for r in rows if r.changed is not None]
        bump("changed_given_past", bool(defined), any(defined))
    return {name: Fraction(n, d) for name, (n, d) in counts.items()}


def coverage(
    records: Sequence[SoftwareRecord],
    capture_results: Mapping[str, CaptureQueryResult],
) -> CoverageReport:
    groups: dict[str, tuple[SoftwareRecord, list[CoverageRow]]] = {}
    all_rows: list[CoverageRow] = []
    for record in records:
        rows = []
        for url in record.urls:
            try:
                result = capture_results[url]
            except KeyError:
                raise MissingCaptureResult(url) from None
            rows.append(coverage_row(record, url, result))
        groups[record.id] = (record, rows)
        all_rows.extend(rows)

    software_gaps = {}
    for sid, (_, rows) in groups.items():
        gap = _smallest_gap(rows)
        if gap is not None:
            software_gaps[sid] = gap

    years: dict[int, dict] = {}
    for sid, (record, rows) in groups.items():
        best = best_publication(record)
        if best is not None:
            years.setdefault(best.year, {})[sid] = (record, rows)

    return CoverageReport(
        rows=all_rows,
        aggregates=_aggregate(groups),
        gap_histogram=gap_histogram(all_rows),
        software_gaps=software_gaps,
        by_year={year: _aggregate(g) for year, g in sorted(years.items())},
    )


def replay_url(capture: cdx.Capture, replay_base: str = DEFAULT_REPLAY_BASE) -> str:
    return f"{replay_base.rstrip('/')}/{capture.timestamp14}/{capture.original_url}"


def parse_replay_url(url: str, replay_base: str = DEFAULT_REPLAY_BASE) -> tuple[str, str]:
    """Split a replay URL into ``(14-digit timestamp, original URL)``."""
    prefix = replay_base.rstrip("/") + "/"
    if not url.startswith(prefix):
        raise ValueError(f"{url!r} is not under replay base {replay_base!r}")
    stamp, sep, original = url[len(prefix):].partition("/")
    if not sep or len(stamp) != 14 or not stamp.isdigit():
        raise ValueError(f"no 14-digit timestamp in {url!r}")
    if not urlsplit(original).scheme:
        raise ValueError(f"no original URL in {url!r}")
    return stamp, original


class NoPublicationError(ValueError):
    pass


def resolve_surrogate(
    record: SoftwareRecord,
    result: CaptureQueryResult,
    window_years: int,
    replay_base: str = DEFAULT_REPLAY_BASE,
) -> SurrogateRef | None:
    if window_years < 0:
        raise ValueError("window_years must be non-negative")
    best = best_publication(record)
    if best is None:
        raise NoPublicationError(f"record {record.id!r} has no publications to anchor on")
    capture = cdx.nearest_by_year(result.captures, best.year)
    if capture is None:
        return None
    gap = capture.timestamp.year - best.year
    if abs(gap) > window_years:
        return None
    return SurrogateRef(
        software_id=record.id,
        url=result.url,
        capture_timestamp=capture.timestamp14,
        replay_url=replay_url(capture, replay_base),
        anchor_year=best.year,
        gap_years=gap,
    )


def resolve_record(
    record: SoftwareRecord,
    capture_results: Mapping[str, CaptureQueryResult],
    window_years: int,
    replay_base: str = DEFAULT_REPLAY_BASE,
) -> SurrogateRef | None:
    """Best surrogate over all of a record's URLs (smallest |gap|, then URL order)."""
    refs = []
    for url in record.urls:
        if url not in capture_results:
            raise MissingCaptureResult(url)
        ref = resolve_surrogate(record, capture_results[url], window_years, replay_base)
        if ref is not None:
            refs.append(ref)
    if not refs:
        return None
    return min(refs, key=lambda r: (abs(r.gap_years), r.gap_years))


def _cell(value: bool | int | None) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def rows_csv(rows: Iterable[CoverageRow]) -> str:
    return _csv(
        ROW_HEADER,
        (
            [
                r.software_id,
                r.url,
                _cell(r.archived_now),
                _cell(r.robots_blocked),
                _cell(r.archived_in_publication_year),
                _cell(r.gap_years),
                _cell(r.changed),
            ]
            for r in rows
        ),
    )


def aggregates_dict(report: CoverageReport, generated_at: str) -> dict:
    out: dict = {"generated_at": generated_at, "unit": "software", "rows": len(report.rows)}
    for name, frac in report.aggregates.items():
        num_def, den_def = AGGREGATE_DEFINITIONS[name]
        out[name] = {
            "numerator": frac.numerator,
            "denominator": frac.denominator,
            "fraction": frac.value,
            "numerator_definition": num_def,
            "denominator_definition": den_def,
        }
    out["gap_histogram"] = {str(k): v for k, v in sorted(report.gap_histogram.items())}
    out["gap_rows"] = sum(report.gap_histogram.values())
    return out


def gap_histogram_csv(histogram: Mapping[int, int]) -> str:
    return _csv(["offset", "count"], sorted(histogram.items()))


def coverage_plot_csv(report: CoverageReport) -> str:
    """Each fraction overall and per best-publication year."""
    lines = []
    groups = [("all", report.aggregates)] + [(str(y), a) for y, a in report.by_year.items()]
    for group, aggregates in groups:
        for name, frac in aggregates.items():
            value = frac.value
            lines.append(
                [group, name, frac.numerator, frac.denominator, "" if value is None else repr(value)]
            )
    return _csv(["group", "metric", "numerator", "denominator", "fraction"], lines)


def surrogates_csv(refs: Iterable[SurrogateRef]) -> str:
    header = ["software_id", "url", "capture_timestamp", "replay_url", "anchor_year", "gap_years"]
    return _csv(header, ([getattr(r, h) for h in header] for r in refs))


def emit_report(
    report: CoverageReport,
    write_text,
    *,
    generated_at: str,
    extra: Mapping[str, str] | None = None,
) -> list[str]:
    """Serialize ``report`` through ``write_text(name, text)``.

    ``extra`` maps additional file names (correlation and class plot data) to
    already-rendered contents. Returns the written names.
    """
    files = {
        "coverage_rows.csv": rows_csv(report.rows),
        "aggregates.json": json.dumps(aggregates_dict(report, generated_at), indent=2) + "\n",
        "plot_coverage.csv": coverage_plot_csv(report),
        "plot_gap_histogram.csv": gap_histogram_csv(report.gap_histogram),
        **(extra or {}),
    }
    for name, text in files.items():
        write_text(name, text)
    return list(files)


def report_clock(deterministic: bool) -> str:
    if deterministic:
        return "1970-01-01T00:00:00Z"
    return dt.datetime.now(dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
