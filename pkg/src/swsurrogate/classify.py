"""URL segmentation and rule-based resource classification.

A URL is split into host, path and query segments. A resource class is
assigned when one of its tokens equals a path or query segment, or when the
URL matches one of the class's named domain patterns (``{github}`` and
friends). Publications imply documentation and source code implies artifacts.
"""
from __future__ import annotations

import bisect
import csv
import enum
import io
import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from urllib.parse import urlsplit

from .records import SoftwareRecord


class ResourceClass(str, enum.Enum):
    SOURCE_CODE = "source_code"
    PUBLICATIONS = "publications"
    UPDATES = "updates"
    DOCUMENTATION = "documentation"
    ARTIFACTS = "artifacts"


IMPLIES = {
    ResourceClass.PUBLICATIONS: ResourceClass.DOCUMENTATION,
    ResourceClass.SOURCE_CODE: ResourceClass.ARTIFACTS,
}

# report column order
REPORT_CLASSES = (
    ResourceClass.DOCUMENTATION,
    ResourceClass.ARTIFACTS,
    ResourceClass.SOURCE_CODE,
    ResourceClass.PUBLICATIONS,
    ResourceClass.UPDATES,
)

DEFAULT_THRESHOLDS = (5, 25)

_HOST_SPLIT = re.compile(r"\.")
_PATH_SPLIT = re.compile(r"[/.\-_]")
_QUERY_SPLIT = re.compile(r"[?=+&:\-_]")


@dataclass(frozen=True)
class UrlSegments:
    host_segments: tuple[str, ...]
    path_segments: tuple[str, ...]
    query_segments: tuple[str, ...]


def _split(pattern: re.Pattern, text: str) -> tuple[str, ...]:
    return tuple(s for s in pattern.split(text.lower()) if s)


def segment_url(url: str) -> UrlSegments:
    parts = urlsplit(url)
    return UrlSegments(
        host_segments=_split(_HOST_SPLIT, parts.hostname or ""),
        path_segments=_split(_PATH_SPLIT, parts.path),
        query_segments=_split(_QUERY_SPLIT, parts.query),
    )


@dataclass(frozen=True)
class DomainPattern:
    """A registrable domain, optionally restricted to a path prefix.

    ``"github.com"`` matches ``github.com`` and any subdomain;
    ``"gnu.org/licenses/gpl"`` additionally requires the path to start with
    ``/licenses/gpl``.
    """

    domain: str
    path_prefix: str = ""

    @classmethod
    def parse(cls, spec: str) -> "DomainPattern":
        domain, _, prefix = spec.strip().lower().partition("/")
        if not domain:
            raise ValueError(f"empty domain in pattern {spec!r}")
        return cls(domain, "/" + prefix if prefix else "")

    def matches(self, host: str, path: str) -> bool:
        if host != self.domain and not host.endswith("." + self.domain):
            return False
        return not self.path_prefix or path.lower().startswith(self.path_prefix)

    def __str__(self) -> str:
        return self.domain + self.path_prefix


@dataclass(frozen=True)
class ClassificationRules:
    segment_tokens: Mapping[ResourceClass, frozenset[str]]
    url_patterns: Mapping[ResourceClass, Mapping[str, tuple[DomainPattern, ...]]]

    def __post_init__(self) -> None:
        for cls, tokens in self.segment_tokens.items():
            for tok in tokens:
                if not tok or tok != tok.lower():
                    raise ValueError(f"{cls.value}: tokens must be lowercase and non-empty: {tok!r}")

    @classmethod
    def empty(cls) -> "ClassificationRules":
        return cls({}, {})

    @classmethod
    def from_dict(cls, data: Mapping) -> "ClassificationRules":
        tokens = {
            ResourceClass(name): frozenset(values)
            for name, values in data.get("segment_tokens", {}).items()
        }
        patterns = {
            ResourceClass(name): {
                label: tuple(DomainPattern.parse(d) for d in domains)
                for label, domains in named.items()
            }
            for name, named in data.get("url_patterns", {}).items()
        }
        return cls(tokens, patterns)

    @classmethod
    def load(cls, path: str | Path) -> "ClassificationRules":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls) -> "ClassificationRules":
        text = resources.files(__package__).joinpath("data/default_rules.json").read_text("utf-8")
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "segment_tokens": {
                c.value: sorted(self.segment_tokens.get(c, ())) for c in ResourceClass
            },
            "url_patterns": {
                c.value: {
                    label: [str(p) for p in pats]
                    for label, pats in self.url_patterns.get(c, {}).items()
                }
                for c in ResourceClass
            },
        }


def close_classes(classes: Iterable[ResourceClass]) -> set[ResourceClass]:
    result = set(classes)
    for sub, sup in IMPLIES.items():
        if sub in result:
            result.add(sup)
    return result


def matching_patterns(url: str, rules: ClassificationRules) -> list[tuple[ResourceClass, str]]:
    parts = urlsplit(url)
    host = (parts.hostname or "").lower()
    hits = []
    for cls, named in rules.url_patterns.items():
        for label, patterns in named.items():
            if any(p.matches(host, parts.path) for p in patterns):
                hits.append((cls, label))
    return hits


def classify_url(url: str, rules: ClassificationRules) -> set[ResourceClass]:
    seg = segment_url(url)
    segments = set(seg.path_segments) | set(seg.query_segments)
    found = {cls for cls, tokens in rules.segment_tokens.items() if segments & tokens}
    found.update(cls for cls, _ in matching_patterns(url, rules))
    return close_classes(found)


def classify_software(
    landing_page_outlinks: Iterable[str],
    self_url: str | None,
    rules: ClassificationRules,
) -> set[ResourceClass]:
    found: set[ResourceClass] = set()
    urls = list(landing_page_outlinks)
    if self_url is not None:
        urls.append(self_url)
    for url in urls:
        found |= classify_url(url, rules)
    return close_classes(found)


def popularity_bucket(record: SoftwareRecord, thresholds: Sequence[int]) -> int:
    """Number of thresholds not exceeding the record's publication count."""
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError(f"thresholds must be strictly increasing: {list(thresholds)}")
    return bisect.bisect_right(thresholds, len(record.publications))


def bucket_labels(thresholds: Sequence[int]) -> list[str]:
    bounds = [0, *thresholds]
    labels = [f"[{lo},{hi})" for lo, hi in zip(bounds, bounds[1:])]
    labels.append(f"[{bounds[-1]},inf)")
    return labels


@dataclass(frozen=True)
class ClassificationRow:
    software_id: str
    bucket: int
    classes: frozenset[ResourceClass]
    not_crawled: bool = False


CLASSIFICATION_HEADER = [
    "software_id",
    "bucket",
    *(f"has_{c.value}" for c in REPORT_CLASSES),
    "not_crawled",
]


def _flag(value: bool) -> str:
    return "true" if value else "false"


def classification_csv(rows: Iterable[ClassificationRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CLASSIFICATION_HEADER)
    for row in rows:
        writer.writerow(
            [row.software_id, row.bucket]
            + [_flag(c in row.classes) for c in REPORT_CLASSES]
            + [_flag(row.not_crawled)]
        )
    return buf.getvalue()


def read_classification_csv(text: str) -> list[ClassificationRow]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        classes = frozenset(c for c in REPORT_CLASSES if rec[f"has_{c.value}"] == "true")
        rows.append(
            ClassificationRow(
                rec["software_id"], int(rec["bucket"]), classes, rec["not_crawled"] == "true"
            )
        )
    return rows


def bucket_fractions_csv(rows: Sequence[ClassificationRow], thresholds: Sequence[int]) -> str:
    """Per-bucket share of crawled software exposing each class, plus an ``all`` row."""
    crawled = [r for r in rows if not r.not_crawled]
    groups: list[tuple[str, str, list[ClassificationRow]]] = [("all", "all", crawled)]
    for idx, label in enumerate(bucket_labels(thresholds)):
        groups.append((str(idx), label, [r for r in crawled if r.bucket == idx]))

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bucket", "label", "software", *(c.value for c in REPORT_CLASSES)])
    for key, label, members in groups:
        n = len(members)
        fractions = [
            repr(sum(c in r.classes for r in members) / n) if n else "" for c in REPORT_CLASSES
        ]
        writer.writerow([key, label, n, *fractions])
    return buf.getvalue()
