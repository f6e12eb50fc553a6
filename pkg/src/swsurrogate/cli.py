"""Command-line pipeline: ingest, crawl, classify, cdx, analyze, surrogate.

Exit codes: 0 success, 1 nothing found (e.g. no surrogate), 2 usage or
missing upstream artifact, 3 I/O or transport failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import cdx, metrics
from .classify import (
    DEFAULT_THRESHOLDS,
    ClassificationRow,
    ClassificationRules,
    bucket_fractions_csv,
    classification_csv,
    classify_software,
    popularity_bucket,
)
from .crawl import DEFAULT_USER_AGENT, CrawlConfig, crawl
from .linkextract import correlation_csv, correlation_for_records, extract_outlinks, read_inlinks_csv
from .records import DuplicateIdError, RecordError, SoftwareRecord, parse_records, serialize_records
from .warc import WarcFormatError, WarcRecord, WarcWriter, read_records
from .workspace import (
    MissingArtifact,
    Workspace,
    atomic_output,
    atomic_write_bytes,
    atomic_write_text,
)

log = logging.getLogger("swsurrogate")

EXIT_OK, EXIT_ABSENT, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        self.code = code
        super().__init__(message)


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _thresholds(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"thresholds must be comma-separated integers: {text!r}")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise argparse.ArgumentTypeError("thresholds must be strictly increasing")
    return values


# setting name -> (parser, built-in default)
SETTINGS = {
    "concurrency": (int, 4),
    "delay": (float, 1.0),
    "timeout": (float, 30.0),
    "max_body_bytes": (int, 10 * 1024 * 1024),
    "user_agent": (str, DEFAULT_USER_AGENT),
    "respect_robots": (_bool, True),
    "rate": (float, 1.0),
    "endpoint": (str, cdx.CDX_ENDPOINT),
    "window_years": (int, metrics.DEFAULT_WINDOW_YEARS),
    "thresholds": (_thresholds, DEFAULT_THRESHOLDS),
    "replay_base": (str, metrics.DEFAULT_REPLAY_BASE),
    "aggregate": (str, "mean"),
    "rules": (str, None),
}


def setting(args: argparse.Namespace, ws: Workspace, name: str):
    """Flag value if given, else workspace config, else built-in default."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    parse, default = SETTINGS[name]
    raw = ws.config().get(name)
    if raw is None:
        return default
    try:
        return parse(raw)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise CliError(f"{ws.config_path}: bad value for {name}: {exc}", EXIT_USAGE) from None


def _rules(args, ws: Workspace) -> ClassificationRules:
    path = setting(args, ws, "rules")
    if path is None and ws.rules_path.exists():
        path = ws.rules_path
    if path is None:
        return ClassificationRules.default()
    try:
        return ClassificationRules.load(path)
    except FileNotFoundError:
        raise CliError(f"rules file not found: {path}", EXIT_USAGE) from None
    except (ValueError, KeyError) as exc:
        raise CliError(f"invalid rules file {path}: {exc}", EXIT_USAGE) from None


def cmd_ingest(args, ws: Workspace) -> int:
    path = Path(args.path)
    skipped: list[RecordError] | None = [] if args.lenient else None
    try:
        with open(path, "rb") as fh:
            records = parse_records(fh, skipped=skipped)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}", EXIT_IO) from None
    except (RecordError, DuplicateIdError) as exc:
        raise CliError(f"{path}: {exc}", EXIT_USAGE) from None

    skipped = skipped or []
    atomic_write_bytes_safe(ws.records_path, serialize_records(records))
    summary = {
        "source": str(path),
        "ingested": len(records),
        "skipped": [{"line": e.line, "error": e.message} for e in skipped],
    }
    atomic_write_text(ws.root / "ingest_summary.json", json.dumps(summary, indent=2) + "\n")
    if not ws.rules_path.exists():
        atomic_write_text(ws.rules_path, json.dumps(ClassificationRules.default().to_dict(), indent=2) + "\n")
    message = f"{len(records)} records ingested, {len(skipped)} skipped"
    if skipped:
        message += " (" + ", ".join(f"line {e.line}" for e in skipped) + ")"
    print(message)
    return EXIT_OK


def atomic_write_bytes_safe(path: Path, data: bytes) -> None:
    try:
        atomic_write_bytes(path, data)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror or exc}", EXIT_IO) from None


def _all_urls(records: Sequence[SoftwareRecord]) -> list[str]:
    return list(dict.fromkeys(u for r in records for u in r.urls))


def cmd_crawl(args, ws: Workspace) -> int:
    if args.fixtures:
        raise CliError("crawl fetches live pages and is disabled by --fixtures", EXIT_USAGE)
    records = ws.load_records()
    if not records:
        raise CliError("no records in workspace: run ingest first", EXIT_USAGE)
    try:
        config = CrawlConfig(
            max_concurrent_fetches=setting(args, ws, "concurrency"),
            per_host_delay=setting(args, ws, "delay"),
            request_timeout=setting(args, ws, "timeout"),
            max_body_bytes=setting(args, ws, "max_body_bytes"),
            user_agent=setting(args, ws, "user_agent"),
            respect_robots=setting(args, ws, "respect_robots"),
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    try:
        with atomic_output(ws.warc_path) as sink:
            summary = crawl(_all_urls(records), config, WarcWriter(sink))
    except OSError as exc:
        raise CliError(f"cannot write {ws.warc_path}: {exc.strerror or exc}", EXIT_IO) from None
    atomic_write_text(ws.root / "crawl_summary.json", json.dumps(summary.to_dict(), indent=2) + "\n")
    print(
        f"fetched {summary.fetched}, failed {summary.failed}, "
        f"skipped by robots.txt {summary.skipped_robots}"
    )
    for url, reason in summary.failures.items():
        print(f"  failed {url}: {reason}")
    return EXIT_OK


def landing_pages(path: Path) -> dict[str, WarcRecord]:
    """Response records keyed by target URI (first occurrence wins)."""
    pages: dict[str, WarcRecord] = {}
    for record in read_records(path):
        if record.record_type == "response" and record.target_uri:
            pages.setdefault(record.target_uri, record)
    return pages


def _page_base(record: WarcRecord) -> str:
    chain = record.header("X-Redirect-Chain")
    return chain.split()[-1] if chain else record.target_uri


def classify_workspace(
    records: Sequence[SoftwareRecord],
    pages: dict[str, WarcRecord],
    rules: ClassificationRules,
    thresholds: Sequence[int],
) -> list[ClassificationRow]:
    rows = []
    for record in records:
        bucket = popularity_bucket(record, thresholds)
        crawled = [u for u in record.urls if u in pages]
        if not crawled:
            rows.append(ClassificationRow(record.id, bucket, frozenset(), not_crawled=True))
            continue
        classes = set()
        for url in crawled:
            page = pages[url]
            outlinks = extract_outlinks(page.payload, _page_base(page))
            classes |= classify_software(outlinks, url, rules)
        rows.append(ClassificationRow(record.id, bucket, frozenset(classes)))
    return rows


def _classification_files(args, ws: Workspace, records) -> tuple[list[ClassificationRow], dict[str, str]]:
    thresholds = setting(args, ws, "thresholds")
    try:
        pages = landing_pages(ws.require_warc())
    except WarcFormatError as exc:
        raise CliError(f"{ws.warc_path}: {exc}", EXIT_IO) from None
    rows = classify_workspace(records, pages, _rules(args, ws), thresholds)
    return rows, {
        "classification.csv": classification_csv(rows),
        "plot_classes.csv": bucket_fractions_csv(rows, thresholds),
    }


def _write_reports(ws: Workspace, files: dict[str, str]) -> None:
    for name, text in files.items():
        try:
            atomic_write_text(ws.reports_dir / name, text)
        except OSError as exc:
            raise CliError(f"cannot write report {name}: {exc.strerror or exc}", EXIT_IO) from None


def cmd_classify(args, ws: Workspace) -> int:
    records = ws.load_records()
    rows, files = _classification_files(args, ws, records)
    _write_reports(ws, files)
    not_crawled = sum(r.not_crawled for r in rows)
    print(f"classified {len(records)} records ({not_crawled} not crawled)")
    return EXIT_OK


def cmd_cdx(args, ws: Workspace) -> int:
    records = ws.load_records()
    if args.fixtures:
        transport: cdx.CdxTransport = cdx.FixtureTransport(ws.fixtures_dir)
    else:
        transport = cdx.HttpTransport(
            endpoint=setting(args, ws, "endpoint"),
            interval=setting(args, ws, "rate"),
            user_agent=setting(args, ws, "user_agent"),
        )
    cached = fetched = 0
    errors: dict[str, str] = {}
    for url in _all_urls(records):
        if ws.cache_path(url).exists() and not args.refresh:
            cached += 1
            continue
        try:
            result = cdx.query_captures(url, transport)
        except cdx.TransportError as exc:
            errors[url] = str(exc)
            continue
        ws.store_capture(result)
        fetched += 1
    atomic_write_text(ws.cdx_dir / "errors.json", json.dumps(errors, indent=2, sort_keys=True) + "\n")
    print(f"{cached} cached, {fetched} fetched" + (f", {len(errors)} failed" if errors else ""))
    if errors:
        for url, message in errors.items():
            print(f"  {url}: {message}", file=sys.stderr)
        raise CliError(f"{len(errors)} capture queries failed", EXIT_IO)
    return EXIT_OK


def _load_captures(ws: Workspace, records) -> dict[str, cdx.CaptureQueryResult]:
    return {url: ws.load_capture(url) for url in _all_urls(records)}


def cmd_analyze(args, ws: Workspace) -> int:
    records = ws.load_records()
    captures = _load_captures(ws, records)
    window = setting(args, ws, "window_years")
    replay_base = setting(args, ws, "replay_base")
    if window < 0:
        raise CliError("--window-years must be non-negative", EXIT_USAGE)

    report = metrics.coverage(records, captures)
    refs = []
    for record in records:
        if record.publications:
            ref = metrics.resolve_record(record, captures, window, replay_base)
            if ref is not None:
                refs.append(ref)
    extra = {"surrogates.csv": metrics.surrogates_csv(refs)}

    if ws.warc_path.exists():
        extra.update(_classification_files(args, ws, records)[1])
    else:
        print(f"notice: {ws.warc_path.name} missing, skipping class-presence plot data")
    if ws.links_path.exists():
        try:
            inlinks = read_inlinks_csv(ws.links_path.read_text("utf-8"))
        except ValueError as exc:
            raise CliError(f"{ws.links_path}: {exc}", EXIT_USAGE) from None
        pubs, links, n = correlation_for_records(records, inlinks, setting(args, ws, "aggregate"))
        extra["plot_correlation.csv"] = correlation_csv(pubs, links)
        print(f"correlation series over {n} software records")
    else:
        print(f"notice: {ws.links_path.name} missing, skipping correlation series")

    written = []
    metrics.emit_report(
        report,
        lambda name, text: (_write_reports(ws, {name: text}), written.append(name)),
        generated_at=metrics.report_clock(args.deterministic),
        extra=extra,
    )
    agg = report.aggregates["archived_now"]
    print(
        f"{len(report.rows)} rows; archived now {agg.numerator}/{agg.denominator}; "
        f"{len(refs)} surrogates within {window} years; wrote {', '.join(sorted(written))}"
    )
    return EXIT_OK


def cmd_surrogate(args, ws: Workspace) -> int:
    records = {r.id: r for r in ws.load_records()}
    record = records.get(args.software_id)
    if record is None:
        raise CliError(f"no such record: {args.software_id}", EXIT_USAGE)
    if not record.urls:
        raise CliError(f"{record.id}: never archived (record has no URLs)", EXIT_ABSENT)
    captures = _load_captures(ws, [record])
    window = setting(args, ws, "window_years")
    if not any(captures[u].captures for u in record.urls):
        raise CliError(f"{record.id}: never archived", EXIT_ABSENT)
    try:
        ref = metrics.resolve_record(record, captures, window, setting(args, ws, "replay_base"))
    except metrics.NoPublicationError as exc:
        raise CliError(str(exc), EXIT_ABSENT) from None
    if ref is None:
        best = metrics.best_publication(record)
        raise CliError(
            f"{record.id}: no capture within {window} years of {best.year}", EXIT_ABSENT
        )
    print(json.dumps(ref.to_dict(), indent=2))
    return EXIT_OK


def _global_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--workspace", default=default if suppress else ".", help="workspace directory")
    parser.add_argument(
        "--fixtures", action="store_true", default=default if suppress else False,
        help="offline mode: read recorded CDX responses, never open network connections",
    )
    parser.add_argument(
        "--deterministic", action="store_true", default=default if suppress else False,
        help="pin the report clock so reruns are byte-identical",
    )
    parser.add_argument("-v", "--verbose", action="store_true", default=default if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swsurrogate", description=__doc__.splitlines()[0])
    _global_options(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="validate a JSON Lines record export")
    p.add_argument("path")
    p.add_argument("--lenient", action="store_true", help="skip malformed lines instead of failing")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("crawl", parents=[common], help="fetch landing pages into pages.warc.gz")
    p.add_argument("--concurrency", type=int)
    p.add_argument("--delay", type=float, help="seconds between requests to one host")
    p.add_argument("--timeout", type=float, help="request timeout in seconds")
    p.add_argument("--max-body-bytes", type=int)
    p.add_argument("--user-agent")
    p.add_argument("--respect-robots", type=_bool, metavar="{true,false}")
    p.set_defaults(func=cmd_crawl)

    p = sub.add_parser("classify", parents=[common], help="classify linked resources per record")
    p.add_argument("--rules", help="alternate rules JSON")
    p.add_argument("--thresholds", type=_thresholds, help="popularity bucket bounds, e.g. 5,25")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("cdx", parents=[common], help="query the capture index for every URL")
    p.add_argument("--refresh", action="store_true", help="re-query URLs already cached")
    p.add_argument("--rate", type=float, help="minimum seconds between index requests")
    p.add_argument("--endpoint", help="CDX endpoint URL")
    p.set_defaults(func=cmd_cdx)

    p = sub.add_parser("analyze", parents=[common], help="coverage, gap and correlation reports")
    p.add_argument("--window-years", type=int)
    p.add_argument("--thresholds", type=_thresholds)
    p.add_argument("--rules")
    p.add_argument("--aggregate", choices=["mean", "median"])
    p.add_argument("--replay-base")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("surrogate", parents=[common], help="print a citable archived reference")
    p.add_argument("software_id")
    p.add_argument("--window-years", type=int)
    p.add_argument("--replay-base")
    p.set_defaults(func=cmd_surrogate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    ws = Workspace(Path(args.workspace))
    try:
        return args.func(args, ws)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except metrics.MissingCaptureResult as exc:
        print(f"error: {exc}: run cdx first", file=sys.stderr)
        return EXIT_USAGE
    except (RecordError, DuplicateIdError) as exc:
        print(f"error: {ws.records_path}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
