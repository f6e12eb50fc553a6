import json
import shutil
import socket
from pathlib import Path

import pytest

from swsurrogate.cli import main
from swsurrogate.records import PublicationRef, SoftwareRecord, serialize_records
from swsurrogate.warc import read_records

FIXTURE_WS = Path(__file__).parent / "fixtures" / "workspace"
EXPECTED = json.loads((Path(__file__).parent / "fixtures" / "workspace_expected.json").read_text())


@pytest.fixture
def cli(capsys):
    def run(*argv):
        code = main([str(a) for a in argv])
        out, err = capsys.readouterr()
        return code, out, err

    return run


@pytest.fixture
def no_network(monkeypatch):
    """Fail loudly if anything tries to open a socket connection."""

    def refuse(*args, **kwargs):
        raise AssertionError("network access attempted in offline mode")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket.socket, "connect_ex", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)


@pytest.fixture
def fixture_ws(tmp_path):
    ws = tmp_path / "ws"
    shutil.copytree(FIXTURE_WS, ws)
    return ws


def write_records(path, records):
    path.write_bytes(serialize_records(records))
    return path


def rec(sid, urls, pubs=((2007, 1),)):
    return SoftwareRecord(sid, sid, tuple(urls), tuple(PublicationRef(y, c) for y, c in pubs))


# -- ingest ---------------------------------------------------------------------


def test_ingest_valid(cli, tmp_path):
    src = write_records(tmp_path / "in.jsonl", [rec(f"s{i}", [f"http://h{i}.org/"]) for i in range(3)])
    code, out, _ = cli("--workspace", tmp_path / "ws", "ingest", src)
    assert code == 0
    assert out.strip() == "3 records ingested, 0 skipped"
    assert (tmp_path / "ws" / "records.jsonl").read_bytes() == src.read_bytes()
    assert (tmp_path / "ws" / "rules.json").exists()


def test_ingest_lenient(cli, tmp_path):
    lines = [
        '{"id":"a","name":"A","urls":["http://a.org"],"publications":[]}',
        '{"id":"b","name":"B","urls":["not a url"],"publications":[]}',
        '{"id":"c","name":"C","urls":[],"publications":[{"year":2001,"citations":1}]}',
    ]
    src = tmp_path / "in.jsonl"
    src.write_text("\n".join(lines) + "\n")
    code, out, _ = cli("ingest", src, "--lenient", "--workspace", tmp_path / "ws")
    assert code == 0
    assert out.strip() == "2 records ingested, 1 skipped (line 2)"
    summary = json.loads((tmp_path / "ws" / "ingest_summary.json").read_text())
    assert summary["skipped"][0]["line"] == 2


def test_ingest_strict_fails_on_bad_line(cli, tmp_path):
    src = tmp_path / "in.jsonl"
    src.write_text("{broken\n")
    code, _, err = cli("--workspace", tmp_path / "ws", "ingest", src)
    assert code == 2 and "line 1" in err


def test_ingest_missing_file(cli, tmp_path):
    code, _, err = cli("--workspace", tmp_path, "ingest", tmp_path / "nope.jsonl")
    assert code == 3
    assert "nope.jsonl" in err


# -- crawl ----------------------------------------------------------------------


def test_crawl_requires_records(cli, tmp_path):
    code, _, err = cli("--workspace", tmp_path, "crawl")
    assert code == 2 and "run ingest first" in err


def test_crawl_refused_offline(cli, tmp_path):
    code, _, err = cli("--workspace", tmp_path, "--fixtures", "crawl")
    assert code == 2 and "--fixtures" in err


def test_crawl_two_reachable(cli, tmp_path, http_server):
    http_server.routes.update(
        {
            "/robots.txt": (200, [], b"User-agent: *\nDisallow: /b\n"),
            "/a": (200, [("Content-Type", "text/html")], b"<a href='manual.html'>m</a>"),
            "/b": (200, [("Content-Type", "text/html")], b"b"),
        }
    )
    ws = tmp_path / "ws"
    ws.mkdir()
    write_records(ws / "records.jsonl", [rec("a", [f"{http_server.base}/a"]), rec("b", [f"{http_server.base}/b"])])

    code, out, _ = cli("--workspace", ws, "crawl", "--delay", "0.01")
    assert code == 0
    assert "fetched 1, failed 0, skipped by robots.txt 1" in out

    code, out, _ = cli("--workspace", ws, "crawl", "--delay", "0.01", "--respect-robots=false")
    assert code == 0
    assert "skipped by robots.txt 0" in out
    responses = [r for r in read_records(ws / "pages.warc.gz") if r.record_type == "response"]
    assert len(responses) == 2
    summary = json.loads((ws / "crawl_summary.json").read_text())
    assert summary["fetched"] == 2


def test_crawl_reads_config_file(cli, tmp_path, http_server):
    http_server.routes["/a"] = (200, [], b"x")
    ws = tmp_path / "ws"
    ws.mkdir()
    write_records(ws / "records.jsonl", [rec("a", [f"{http_server.base}/a"])])
    (ws / "workspace.conf").write_text("delay = 0.01\nrespect-robots = no\n")
    code, out, _ = cli("--workspace", ws, "crawl")
    assert code == 0 and "fetched 1" in out
    (ws / "workspace.conf").write_text("delay = fast\n")
    code, _, err = cli("--workspace", ws, "crawl")
    assert code == 2 and "delay" in err


# -- classify -------------------------------------------------------------------


def test_classify_fixture_workspace(cli, fixture_ws, no_network):
    code, out, _ = cli("--workspace", fixture_ws, "classify")
    assert code == 0
    assert "1 not crawled" in out
    lines = (fixture_ws / "reports" / "classification.csv").read_text().splitlines()
    header = lines[0].split(",")
    rows = {l.split(",")[0]: dict(zip(header, l.split(","))) for l in lines[1:]}
    assert rows["s15"]["not_crawled"] == "true"
    assert rows["s01"]["has_documentation"] == "true" and rows["s01"]["has_artifacts"] == "true"
    assert rows["s01"]["has_source_code"] == "false"


def test_classify_custom_rules(cli, fixture_ws, tmp_path):
    alt = tmp_path / "alt.json"
    alt.write_text(json.dumps({"segment_tokens": {"updates": ["manual"]}, "url_patterns": {}}))
    code, _, _ = cli("--workspace", fixture_ws, "classify", "--rules", alt)
    assert code == 0
    text = (fixture_ws / "reports" / "classification.csv").read_text().splitlines()
    header = text[0].split(",")
    s01 = dict(zip(header, next(l for l in text if l.startswith("s01,")).split(",")))
    assert s01["has_updates"] == "true" and s01["has_documentation"] == "false"


def test_classify_without_warc(cli, tmp_path):
    ws = tmp_path / "ws"
    ws.mkdir()
    write_records(ws / "records.jsonl", [rec("a", ["http://a.org/"])])
    code, _, err = cli("--workspace", ws, "classify")
    assert code == 2 and "run crawl first" in err


# -- cdx ------------------------------------------------------------------------


def test_cdx_fixtures_then_cached(cli, tmp_path, no_network):
    ws = tmp_path / "ws"
    shutil.copytree(FIXTURE_WS / "cdx", ws / "cdx")
    records = [rec("s01", ["http://sw01.example.org/"]), rec("s02", ["http://sw02.example.org/"])]
    write_records(ws / "records.jsonl", records)

    code, out, _ = cli("--workspace", ws, "--fixtures", "cdx")
    assert code == 0 and out.strip() == "0 cached, 2 fetched"
    assert len(list((ws / "cdx" / "cache").glob("*.json"))) == 2

    code, out, _ = cli("--workspace", ws, "--fixtures", "cdx")
    assert out.strip() == "2 cached, 0 fetched"
    code, out, _ = cli("--workspace", ws, "cdx", "--fixtures", "--refresh")
    assert out.strip() == "0 cached, 2 fetched"


def test_cdx_missing_fixture_is_an_error(cli, tmp_path, no_network):
    ws = tmp_path / "ws"
    ws.mkdir()
    write_records(ws / "records.jsonl", [rec("x", ["http://unrecorded.org/"])])
    code, out, err = cli("--workspace", ws, "--fixtures", "cdx")
    assert code == 3
    assert "1 failed" in out and "unrecorded.org" in err


def test_cdx_live_network_down(cli, tmp_path, closed_port):
    ws = tmp_path / "ws"
    ws.mkdir()
    write_records(ws / "records.jsonl", [rec("a", ["http://a.org/"]), rec("b", ["http://b.org/"])])
    endpoint = f"http://127.0.0.1:{closed_port}/cdx/search/cdx"
    code, out, err = cli("--workspace", ws, "cdx", "--endpoint", endpoint, "--rate", "0.01")
    assert code == 3
    assert "2 failed" in out and "2 capture queries failed" in err
    errors = json.loads((ws / "cdx" / "errors.json").read_text())
    assert set(errors) == {"http://a.org/", "http://b.org/"}


# -- analyze --------------------------------------------------------------------


def prepared(cli, ws):
    assert cli("--workspace", ws, "--fixtures", "cdx")[0] == 0
    return ws


def test_analyze_fixture_workspace(cli, fixture_ws, no_network):
    prepared(cli, fixture_ws)
    code, out, _ = cli("--workspace", fixture_ws, "--fixtures", "--deterministic", "analyze")
    assert code == 0
    reports = fixture_ws / "reports"
    for name in (
        "coverage_rows.csv",
        "aggregates.json",
        "plot_coverage.csv",
        "plot_gap_histogram.csv",
        "plot_classes.csv",
        "plot_correlation.csv",
        "surrogates.csv",
    ):
        assert (reports / name).exists(), name
    agg = json.loads((reports / "aggregates.json").read_text())
    for name, want in EXPECTED["aggregates"].items():
        assert {k: agg[name][k] for k in want} == want
    assert (reports / "plot_correlation.csv").read_text() == EXPECTED["correlation_csv"]


def test_analyze_without_links(cli, fixture_ws):
    prepared(cli, fixture_ws)
    (fixture_ws / "links.csv").unlink()
    code, out, _ = cli("--workspace", fixture_ws, "analyze")
    assert code == 0
    assert "links.csv missing" in out
    assert not (fixture_ws / "reports" / "plot_correlation.csv").exists()


def test_analyze_window_filters_surrogates(cli, fixture_ws):
    prepared(cli, fixture_ws)
    for window in (0, 2, 10):
        assert cli("--workspace", fixture_ws, "analyze", "--window-years", window)[0] == 0
        lines = (fixture_ws / "reports" / "surrogates.csv").read_text().splitlines()[1:]
        gaps = [int(l.rsplit(",", 1)[1]) for l in lines]
        assert all(abs(g) <= window for g in gaps)
        if window == 2:
            assert len(gaps) == len(EXPECTED["surrogates_window_2"])


def test_analyze_before_cdx(cli, fixture_ws):
    code, _, err = cli("--workspace", fixture_ws, "analyze")
    assert code == 2 and "run cdx first" in err


def test_pipeline_idempotent(cli, fixture_ws, no_network):
    prepared(cli, fixture_ws)
    reports = fixture_ws / "reports"
    cli("--workspace", fixture_ws, "--fixtures", "--deterministic", "analyze")
    first = {p.name: p.read_bytes() for p in reports.iterdir()}
    cache = {p.name: p.read_bytes() for p in (fixture_ws / "cdx" / "cache").iterdir()}
    cli("--workspace", fixture_ws, "--fixtures", "cdx", "--refresh")
    cli("--workspace", fixture_ws, "--fixtures", "--deterministic", "analyze")
    assert {p.name: p.read_bytes() for p in reports.iterdir()} == first
    assert {p.name: p.read_bytes() for p in (fixture_ws / "cdx" / "cache").iterdir()} == cache
    assert not list(fixture_ws.rglob("*.tmp"))


# -- surrogate ------------------------------------------------------------------


def test_surrogate_found(cli, fixture_ws, no_network):
    prepared(cli, fixture_ws)
    code, out, _ = cli("--workspace", fixture_ws, "surrogate", "s11")
    assert code == 0
    ref = json.loads(out)
    assert ref["replay_url"] == "https://web.archive.org/web/20140702000000/http://sw11.example.org/"
    assert ref["gap_years"] == 2


def test_surrogate_never_archived(cli, fixture_ws):
    prepared(cli, fixture_ws)
    code, _, err = cli("--workspace", fixture_ws, "surrogate", "s05")
    assert code == 1 and "never archived" in err


def test_surrogate_outside_window(cli, fixture_ws):
    prepared(cli, fixture_ws)
    code, _, err = cli("--workspace", fixture_ws, "surrogate", "s14")
    assert code == 1 and "within 2 years" in err
    code, out, _ = cli("--workspace", fixture_ws, "surrogate", "s14", "--window-years", "10")
    assert code == 0 and json.loads(out)["gap_years"] == -10


def test_surrogate_unknown_id(cli, fixture_ws):
    prepared(cli, fixture_ws)
    code, _, err = cli("--workspace", fixture_ws, "surrogate", "nope")
    assert code == 2 and "no such record" in err


def test_usage_error_exit_code(cli):
    assert cli("frobnicate")[0] == 2
