"""Outlink extraction from archived pages and publication/in-link alignment."""
from __future__ import annotations

import csv
import io
import statistics
from collections import Counter, defaultdict
from html.parser import HTMLParser
from typing import Iterable, Mapping, Sequence
from urllib.parse import urljoin

from .records import InvalidURLError, SoftwareRecord, validate_url

YearSeries = Mapping[int, int]
AlignedSeries = dict[int, float]


class _AnchorParser(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.hrefs: list[str] = []
        self.base: str | None = None

    def handle_starttag(self, tag, attrs):
        if tag == "a":
            href = dict(attrs).get("href")
            if href:
                self.hrefs.append(href.strip())
        elif tag == "base" and self.base is None:
            href = dict(attrs).get("href")
            if href:
                self.base = href.strip()

    handle_startendtag = handle_starttag


def extract_outlinks(html: bytes, base: str) -> list[str]:
    """Absolute, normalized targets of every ``<a href>`` in document order.

    Relative links resolve against ``<base href>`` when present, otherwise
    against ``base``. Unusable targets (``mailto:``, ``javascript:``, garbage)
    are dropped and duplicates keep their first position.
    """
    parser = _AnchorParser()
    try:
        parser.feed(html.decode("utf-8", errors="replace"))
        parser.close()
    except Exception:  # html.parser is tolerant; keep whatever was collected
        pass
    effective_base = urljoin(base, parser.base) if parser.base else base

    links: list[str] = []
    seen: set[str] = set()
    for href in parser.hrefs:
        try:
            url = validate_url(urljoin(effective_base, href))
        except (InvalidURLError, ValueError):
            continue
        if url not in seen:
            seen.add(url)
            links.append(url)
    return links


class AlignmentError(ValueError):
    pass


def _normalize(series: Mapping[int, int | float]) -> dict[int, float]:
    for year, count in series.items():
        if count < 0:
            raise ValueError(f"negative count {count} for year {year}")
    peak = max(series.values(), default=0)
    if peak == 0:
        return {year: 0.0 for year in series}
    return {year: count / peak for year, count in series.items()}


def alignment_year(publications: YearSeries) -> int:
    """Year with most publications; ties resolve to the earliest such year."""
    peak = max(publications.values(), default=0)
    if peak <= 0:
        raise AlignmentError("publication series has no non-zero year")
    return min(year for year, count in publications.items() if count == peak)


def correlation_series(
    publications: YearSeries, inlinks: YearSeries
) -> tuple[AlignedSeries, AlignedSeries]:
    anchor = alignment_year(publications)
    pubs = _normalize(publications)
    links = _normalize(inlinks)
    return (
        {year - anchor: v for year, v in sorted(pubs.items())},
        {year - anchor: v for year, v in sorted(links.items())},
    )


def aggregate_aligned(
    per_software: Sequence[AlignedSeries], method: str = "mean"
) -> AlignedSeries:
    """Combine aligned series offset-wise, then rescale so the peak is 1.

    Each offset averages only the series defined there. ``method`` is
    ``"mean"`` or ``"median"``.
    """
    if not per_software:
        raise ValueError("cannot aggregate an empty list of series")
    reducers = {"mean": statistics.fmean, "median": statistics.median}
    try:
        reduce = reducers[method]
    except KeyError:
        raise ValueError(f"unknown aggregation method {method!r}") from None
    if len(per_software) == 1:
        return dict(sorted(per_software[0].items()))

    values: dict[int, list[float]] = defaultdict(list)
    for series in per_software:
        for offset, v in series.items():
            values[offset].append(v)
    combined = {offset: float(reduce(vs)) for offset, vs in sorted(values.items())}
    return _normalize(combined)


def publication_years(record: SoftwareRecord) -> dict[int, int]:
    """Publications per year for one record."""
    return dict(sorted(Counter(p.year for p in record.publications).items()))


def read_inlinks_csv(text: str) -> dict[str, dict[int, int]]:
    """Parse ``software_id,year,count`` rows; repeated keys are summed."""
    reader = csv.DictReader(io.StringIO(text))
    expected = ["software_id", "year", "count"]
    if reader.fieldnames != expected:
        raise ValueError(f"in-link CSV header must be {','.join(expected)}, got {reader.fieldnames}")
    result: dict[str, dict[int, int]] = defaultdict(lambda: defaultdict(int))
    for lineno, row in enumerate(reader, start=2):
        try:
            year, count = int(row["year"]), int(row["count"])
        except (TypeError, ValueError):
            raise ValueError(f"in-link CSV line {lineno}: year and count must be integers") from None
        if count < 0:
            raise ValueError(f"in-link CSV line {lineno}: negative count")
        result[row["software_id"]][year] += count
    return {sid: dict(sorted(ys.items())) for sid, ys in result.items()}


def correlation_csv(publications: AlignedSeries, inlinks: AlignedSeries) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["offset", "publications_norm", "inlinks_norm"])
    for offset in sorted(set(publications) | set(inlinks)):
        p, i = publications.get(offset), inlinks.get(offset)
        writer.writerow([offset, "" if p is None else repr(p), "" if i is None else repr(i)])
    return buf.getvalue()


def correlation_for_records(
    records: Iterable[SoftwareRecord],
    inlinks: Mapping[str, Mapping[int, int]],
    method: str = "mean",
) -> tuple[AlignedSeries, AlignedSeries, int]:
    """Aggregate aligned series over records present in the in-link data.

    Returns the combined publication and in-link series and the number of
    software records that contributed.
    """
    pub_series, link_series = [], []
    for record in records:
        if record.id not in inlinks:
            continue
        pubs = publication_years(record)
        if not any(pubs.values()):
            continue
        p, i = correlation_series(pubs, inlinks[record.id])
        pub_series.append(p)
        if i:
            link_series.append(i)
    if not pub_series:
        return {}, {}, 0
    links = aggregate_aligned(link_series, method) if link_series else {}
    return aggregate_aligned(pub_series, method), links, len(pub_series)
