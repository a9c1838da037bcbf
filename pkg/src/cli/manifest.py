"""Append-only run manifests written next to command outputs."""

import hashlib
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Union

from pydantic import BaseModel, Field

from ..errors import ArtifactExistsError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "run_manifest.json"


class ArtifactRecord(BaseModel):
    path: str
    sha256: str
    bytes: int

    @classmethod
    def of(cls, path: Union[str, Path]) -> "ArtifactRecord":
        path = Path(path)
        return cls(path=str(path), sha256=sha256_file(path), bytes=path.stat().st_size)


class RunEntry(BaseModel):
    """One command invocation."""

    command: str
    argv: list[str]
    started_at: str
    wall_clock_s: float = Field(..., ge=0)
    config: Optional[dict[str, Any]] = None
    parameters: dict[str, Any] = Field(default_factory=dict)
    seeds: dict[str, int] = Field(default_factory=dict)
    inputs: list[str] = Field(default_factory=list)
    outputs: list[ArtifactRecord] = Field(default_factory=list)
    status: str = "ok"


class RunManifest(BaseModel):
    entries: list[RunEntry] = Field(default_factory=list)

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "RunManifest":
        path = Path(directory) / MANIFEST_NAME
        if not path.exists():
            return cls()
        return cls.model_validate_json(path.read_text())

    @classmethod
    def append(cls, directory: Union[str, Path], entry: RunEntry) -> Path:
        """Add an entry to the directory's manifest, keeping earlier ones."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = cls.load(directory)
        manifest.entries.append(entry)
        path = directory / MANIFEST_NAME
        path.write_text(manifest.model_dump_json(indent=2))
        logger.debug("Recorded %s in %s", entry.command, path)
        return path


def sha256_file(path: Union[str, Path], chunk_size: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def ensure_fresh(*paths: Path) -> None:
    """Refuse to run when any output already exists."""
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing:
        raise ArtifactExistsError(f"Refusing to overwrite existing output(s): {', '.join(existing)}")
