"""Run manifests: enough recorded state to re-run a command bit-exactly."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from . import __version__

MANIFEST_NAME = "manifest.json"


def now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    subcommand: str
    argv: list[str]
    instance_paths: list[str]
    format: str | None
    config: dict[str, Any]
    seed: int
    tool_version: str = __version__
    started_at: str = field(default_factory=now)
    finished_at: str | None = None
    result: dict[str, Any] = field(default_factory=dict)

    def finish(self, result: dict[str, Any]) -> None:
        self.result = result
        self.finished_at = now()

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        return cls(**json.loads(path.read_text()))
