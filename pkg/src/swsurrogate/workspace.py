"""On-disk layout shared by the pipeline stages."""
from __future__ import annotations

import configparser
import json
import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .cdx import CaptureQueryResult, fixture_key
from .records import SoftwareRecord, parse_records

CONFIG_NAME = "workspace.conf"


class MissingArtifact(RuntimeError):
    """A stage input produced by an upstream stage does not exist."""


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


@contextmanager
def atomic_output(path: Path) -> Iterator:
    """Binary file handle that replaces ``path`` only on clean exit."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


@dataclass(frozen=True)
class Workspace:
    root: Path

    @property
    def records_path(self) -> Path:
        return self.root / "records.jsonl"

    @property
    def warc_path(self) -> Path:
        return self.root / "pages.warc.gz"

    @property
    def cdx_dir(self) -> Path:
        return self.root / "cdx"

    @property
    def fixtures_dir(self) -> Path:
        return self.cdx_dir / "fixtures"

    @property
    def cache_dir(self) -> Path:
        return self.cdx_dir / "cache"

    @property
    def links_path(self) -> Path:
        return self.root / "links.csv"

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    @property
    def rules_path(self) -> Path:
        return self.root / "rules.json"

    @property
    def config_path(self) -> Path:
        return self.root / CONFIG_NAME

    def config(self) -> dict[str, str]:
        """Flat ``key = value`` settings; ``-`` and ``_`` in keys are equivalent."""
        if not self.config_path.exists():
            return {}
        parser = configparser.ConfigParser(interpolation=None)
        parser.read_string("[workspace]\n" + self.config_path.read_text("utf-8"))
        return {k.replace("-", "_"): v for k, v in parser["workspace"].items()}

    def load_records(self) -> list[SoftwareRecord]:
        if not self.records_path.exists():
            raise MissingArtifact(f"{self.records_path} not found: run ingest first")
        with open(self.records_path, "rb") as fh:
            return parse_records(fh)

    def require_warc(self) -> Path:
        if not self.warc_path.exists():
            raise MissingArtifact(f"{self.warc_path} not found: run crawl first")
        return self.warc_path

    def cache_path(self, url: str) -> Path:
        return self.cache_dir / f"{fixture_key(url)}.json"

    def load_capture(self, url: str) -> CaptureQueryResult:
        path = self.cache_path(url)
        if not path.exists():
            raise MissingArtifact(f"no capture data for {url}: run cdx first")
        return CaptureQueryResult.from_dict(json.loads(path.read_text("utf-8")))

    def store_capture(self, result: CaptureQueryResult) -> None:
        atomic_write_text(
            self.cache_path(result.url), json.dumps(result.to_dict(), indent=1, sort_keys=True) + "\n"
        )
